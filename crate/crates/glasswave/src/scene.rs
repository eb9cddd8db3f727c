//! Conversational scene rendering: wearer, partner, bystanders, and ambient
//! noise mixed with exact SNR control and overlap-ratio placement, plus
//! batch dataset generation.

use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::ArrayGeometry;
use crate::room::{
    convolve_multichannel, sample_room, SamplingRanges, ScenePlacement,
};
use crate::wav;

/// Number of built-in synthetic utterance clips.
pub const FIXTURE_CLIP_COUNT: usize = 20;

/// A playable audio asset: a built-in fixture clip, generated pink noise,
/// or a mono WAV on disk.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AssetRef {
    Fixture { index: usize },
    Pink,
    File { path: PathBuf },
}

/// Catalog of utterance and noise assets a dataset draws from.
#[derive(Debug, Clone)]
pub struct AssetIndex {
    pub utterances: Vec<AssetRef>,
    pub noises: Vec<AssetRef>,
}

impl AssetIndex {
    /// The built-in fixture set: 20 synthetic utterances and pink noise.
    pub fn builtin() -> AssetIndex {
        AssetIndex {
            utterances: (0..FIXTURE_CLIP_COUNT)
                .map(|index| AssetRef::Fixture { index })
                .collect(),
            noises: vec![AssetRef::Pink],
        }
    }

    /// Scans `<dir>/utterances/*.wav` and `<dir>/noise/*.wav`. Falls back to
    /// the built-in fixtures for whichever group is empty.
    pub fn scan(dir: impl AsRef<Path>) -> Result<AssetIndex> {
        let mut index = AssetIndex {
            utterances: scan_wavs(dir.as_ref().join("utterances"))?,
            noises: scan_wavs(dir.as_ref().join("noise"))?,
        };
        if index.utterances.is_empty() {
            index.utterances = AssetIndex::builtin().utterances;
        }
        if index.noises.is_empty() {
            index.noises = vec![AssetRef::Pink];
        }
        Ok(index)
    }
}

fn scan_wavs(dir: PathBuf) -> Result<Vec<AssetRef>> {
    if !dir.is_dir() {
        return Ok(vec![]);
    }
    let mut paths: Vec<PathBuf> = std::fs::read_dir(&dir)
        .map_err(|e| Error::file(&dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|ext| ext.eq_ignore_ascii_case("wav")))
        .collect();
    paths.sort();
    Ok(paths.into_iter().map(|path| AssetRef::File { path }).collect())
}

/// Deterministic synthetic utterance: a harmonic stack with a syllable-rate
/// envelope and brief pauses, band-limited well below Nyquist.
pub fn fixture_clip(index: usize, sample_rate_hz: f64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(0xF17C_0000 + index as u64);
    let seconds = 1.6 + 0.9 * (index as f64 / FIXTURE_CLIP_COUNT as f64);
    let len = (seconds * sample_rate_hz) as usize;
    let f0 = rng.random_range(110.0..320.0);
    let harmonics: usize = rng.random_range(3..7);
    let syllable_hz = rng.random_range(2.5..5.0);
    let vibrato_hz = rng.random_range(4.0..7.0);
    let vibrato_depth = rng.random_range(0.002..0.01);
    let mut amps = Vec::new();
    for h in 1..=harmonics {
        let f = f0 * h as f64;
        if f > 0.3 * sample_rate_hz {
            break;
        }
        amps.push((f, rng.random_range(0.2..1.0) / h as f64));
    }
    let mut out = vec![0.0; len];
    let mut phase: Vec<f64> = amps.iter().map(|_| rng.random_range(0.0..std::f64::consts::TAU)).collect();
    for i in 0..len {
        let t = i as f64 / sample_rate_hz;
        let syllable = 0.5 * (1.0 - (std::f64::consts::TAU * syllable_hz * t).cos());
        // Hard pause in the middle third of every other syllable period.
        let cycle = (syllable_hz * t).fract();
        let gate = if ((syllable_hz * t) as usize) % 3 == 2 && cycle < 0.4 { 0.0 } else { 1.0 };
        let vibrato = 1.0 + vibrato_depth * (std::f64::consts::TAU * vibrato_hz * t).sin();
        let mut sample = 0.0;
        for ((f, a), ph) in amps.iter().zip(phase.iter_mut()) {
            *ph += std::f64::consts::TAU * f * vibrato / sample_rate_hz;
            sample += a * ph.sin();
        }
        out[i] = 0.25 * sample * syllable * gate;
    }
    // Fade edges so placement cuts are click-free.
    let fade = (0.01 * sample_rate_hz) as usize;
    for i in 0..fade.min(len) {
        let w = i as f64 / fade as f64;
        out[i] *= w;
        out[len - 1 - i] *= w;
    }
    out
}

/// Pink noise via the Paul Kellet filter, roughly unit RMS.
pub fn pink_noise(len: usize, rng: &mut impl Rng) -> Vec<f64> {
    let (mut b0, mut b1, mut b2, mut b3, mut b4, mut b5, mut b6) =
        (0.0f64, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
    let mut out = Vec::with_capacity(len);
    for _ in 0..len {
        let white: f64 = rng.random_range(-1.0..1.0);
        b0 = 0.99886 * b0 + white * 0.0555179;
        b1 = 0.99332 * b1 + white * 0.0750759;
        b2 = 0.96900 * b2 + white * 0.1538520;
        b3 = 0.86650 * b3 + white * 0.3104856;
        b4 = 0.55000 * b4 + white * 0.5329522;
        b5 = -0.7616 * b5 - white * 0.0168980;
        let pink = b0 + b1 + b2 + b3 + b4 + b5 + b6 + white * 0.5362;
        b6 = white * 0.115926;
        out.push(0.11 * pink);
    }
    out
}

fn load_utterance(asset: &AssetRef, sample_rate_hz: f64) -> Result<Vec<f64>> {
    match asset {
        AssetRef::Fixture { index } => {
            if *index >= FIXTURE_CLIP_COUNT {
                return Err(Error::MissingAsset(format!("fixture {index}")));
            }
            Ok(fixture_clip(*index, sample_rate_hz))
        }
        AssetRef::File { path } => {
            let (samples, fs) = wav::read_wav_mono(path)
                .map_err(|_| Error::MissingAsset(path.display().to_string()))?;
            if (fs - sample_rate_hz).abs() > 1e-9 {
                return Err(Error::SampleRateMismatch {
                    left: fs,
                    right: sample_rate_hz,
                });
            }
            Ok(samples)
        }
        AssetRef::Pink => Err(Error::MissingAsset(
            "pink noise cannot serve as an utterance".into(),
        )),
    }
}

/// Noise dry signal of exactly `len` samples; file assets are looped.
fn load_noise(asset: &AssetRef, sample_rate_hz: f64, len: usize, rng: &mut impl Rng) -> Result<Vec<f64>> {
    match asset {
        AssetRef::Pink => Ok(pink_noise(len, rng)),
        AssetRef::Fixture { index } => {
            let clip = fixture_clip(*index, sample_rate_hz);
            Ok(loop_to(&clip, len))
        }
        AssetRef::File { path } => {
            let (samples, fs) = wav::read_wav_mono(path)
                .map_err(|_| Error::MissingAsset(path.display().to_string()))?;
            if (fs - sample_rate_hz).abs() > 1e-9 {
                return Err(Error::SampleRateMismatch {
                    left: fs,
                    right: sample_rate_hz,
                });
            }
            Ok(loop_to(&samples, len))
        }
    }
}

fn loop_to(clip: &[f64], len: usize) -> Vec<f64> {
    assert!(!clip.is_empty());
    (0..len).map(|i| clip[i % clip.len()]).collect()
}

/// Declarative description of one scene; synthesis is a pure function of
/// this manifest plus the asset files it references.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SceneManifest {
    pub scene_id: String,
    pub scenario: String,
    pub seed: u64,
    pub sample_rate_hz: f64,
    pub placement: ScenePlacement,
    pub wearer_asset: AssetRef,
    pub partner_asset: AssetRef,
    pub bystander_assets: Vec<AssetRef>,
    pub noise_asset: AssetRef,
    /// `None` disables the noise stem entirely.
    pub target_snr_db: Option<f64>,
    pub overlap_ratio: f64,
}

impl SceneManifest {
    pub fn bystander_count(&self) -> usize {
        self.bystander_assets.len()
    }
}

/// Rendered per-source reverberant stems.
#[derive(Debug, Clone)]
pub struct SceneStems {
    pub wearer: Array2<f64>,
    pub partner: Array2<f64>,
    pub bystanders: Vec<Array2<f64>>,
    pub noise: Array2<f64>,
}

/// Sample intervals where each dry source is active, plus realized levels.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SceneAlignment {
    pub scene_len: usize,
    pub wearer: (usize, usize),
    pub partner: (usize, usize),
    pub bystanders: Vec<(usize, usize)>,
    pub realized_overlap: Vec<f64>,
    pub noise_gain: f64,
    pub realized_snr_db: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct SceneAudio {
    pub mixture: Array2<f64>,
    pub stems: SceneStems,
    pub alignment: SceneAlignment,
    pub sample_rate_hz: f64,
}

impl SceneAudio {
    pub fn channels(&self) -> usize {
        self.mixture.nrows()
    }

    pub fn len(&self) -> usize {
        self.mixture.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.mixture.is_empty()
    }

    /// Largest deviation between the mixture and the sum of stems.
    pub fn additivity_defect(&self) -> f64 {
        let mut sum = self.stems.wearer.clone();
        sum += &self.stems.partner;
        for b in &self.stems.bystanders {
            sum += b;
        }
        sum += &self.stems.noise;
        self.mixture
            .iter()
            .zip(sum.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Gain for the noise signal so that
/// `10 log10(P_speech / (g^2 P_noise))` hits the target, with powers taken
/// as full-signal mean squares.
pub fn snr_gain(speech_ref: &[f64], noise: &[f64], target_snr_db: f64) -> Result<f64> {
    let p_speech = mean_square(speech_ref);
    let p_noise = mean_square(noise);
    if p_noise <= 0.0 {
        return Err(Error::InvalidArgument("noise signal is silent".into()));
    }
    if p_speech <= 0.0 {
        return Err(Error::InvalidArgument("speech reference is silent".into()));
    }
    Ok((p_speech / (p_noise * 10f64.powf(target_snr_db / 10.0))).sqrt())
}

fn mean_square(x: &[f64]) -> f64 {
    if x.is_empty() {
        0.0
    } else {
        x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64
    }
}

/// Overlapped samples between `[offset, offset+len)` and the active set.
pub fn overlap_samples(main_active: &[(usize, usize)], offset: usize, len: usize) -> usize {
    let end = offset + len;
    main_active
        .iter()
        .map(|(s, e)| end.min(*e).saturating_sub(offset.max(*s)))
        .sum()
}

/// Chooses a bystander start offset whose overlap with the main-speaker
/// activity hits `ratio * bystander_len` within 2% absolute ratio error.
/// Offsets range over `[0, domain_end - bystander_len]`; candidate segments
/// are enumerated and one is picked with the RNG, so the result is
/// deterministic per seed.
pub fn place_overlap(
    main_active: &[(usize, usize)],
    bystander_len: usize,
    ratio: f64,
    domain_end: usize,
    rng: &mut impl Rng,
) -> Result<usize> {
    if bystander_len == 0 || domain_end < bystander_len {
        return Err(Error::InfeasibleOverlap { ratio });
    }
    if !(0.0..=1.0).contains(&ratio) {
        return Err(Error::InvalidArgument(format!(
            "overlap ratio must lie in [0, 1], got {ratio}"
        )));
    }
    let max_offset = domain_end - bystander_len;
    let target = ratio * bystander_len as f64;

    // Breakpoints of the piecewise-linear overlap(offset) function.
    let mut breaks: Vec<usize> = vec![0, max_offset];
    for (s, e) in main_active {
        for value in [
            s.saturating_sub(bystander_len),
            *s,
            e.saturating_sub(bystander_len),
            *e,
        ] {
            if value <= max_offset {
                breaks.push(value);
            }
        }
    }
    breaks.sort_unstable();
    breaks.dedup();

    let overlap_at = |o: usize| overlap_samples(main_active, o, bystander_len) as f64;
    let tolerance = 0.02 * bystander_len as f64;

    // Candidate segments [lo, hi] of offsets achieving the target.
    let mut segments: Vec<(usize, usize)> = Vec::new();
    for pair in breaks.windows(2) {
        let (o1, o2) = (pair[0], pair[1]);
        let (f1, f2) = (overlap_at(o1), overlap_at(o2));
        if (f1 - target).abs() <= 1e-9 && (f2 - target).abs() <= 1e-9 {
            segments.push((o1, o2));
        } else if (target - f1) * (target - f2) <= 0.0 && f1 != f2 {
            let t = (target - f1) / (f2 - f1);
            let o = o1 as f64 + t * (o2 - o1) as f64;
            let o = (o.round() as usize).clamp(o1, o2);
            if (overlap_at(o) - target).abs() <= tolerance {
                segments.push((o, o));
            }
        }
    }
    if segments.is_empty() {
        return Err(Error::InfeasibleOverlap { ratio });
    }
    let (lo, hi) = segments[rng.random_range(0..segments.len())];
    let offset = if lo == hi { lo } else { rng.random_range(lo..=hi) };
    let achieved = overlap_at(offset);
    if ratio == 0.0 && achieved != 0.0 {
        return Err(Error::InfeasibleOverlap { ratio });
    }
    if (achieved - target).abs() > tolerance {
        return Err(Error::InfeasibleOverlap { ratio });
    }
    Ok(offset)
}

/// Renders a scene: simulates RIRs for every source, places utterances on
/// the timeline, scales noise for the target SNR, and sums the stems.
pub fn synthesize_scene(
    manifest: &SceneManifest,
    geometry: &ArrayGeometry,
) -> Result<SceneAudio> {
    let fs = manifest.sample_rate_hz;
    let mic_count = geometry.mic_count();
    if manifest.placement.bystanders.len() != manifest.bystander_assets.len() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} bystander placements", manifest.bystander_assets.len()),
            got: format!("{}", manifest.placement.bystanders.len()),
        });
    }
    // Synthesis draws live on stream 1; manifest construction used stream 0.
    let mut rng = ChaCha8Rng::seed_from_u64(manifest.seed);
    rng.set_stream(1);

    let wearer_dry = load_utterance(&manifest.wearer_asset, fs)?;
    let partner_dry = load_utterance(&manifest.partner_asset, fs)?;

    let lead = (0.25 * fs) as usize;
    let gap = (rng.random_range(0.2..0.5) * fs) as usize;
    let tail = (0.3 * fs) as usize;
    let wearer_offset = lead;
    let partner_offset = lead + wearer_dry.len() + gap;
    let main_end = partner_offset + partner_dry.len();
    let main_active = [
        (wearer_offset, wearer_offset + wearer_dry.len()),
        (partner_offset, main_end),
    ];

    // Reverberant renderings, before placement.
    let room = &manifest.placement.room;
    let pose = &manifest.placement.pose;
    let wearer_wet = convolve_multichannel(
        &wearer_dry,
        fs,
        &crate::room::simulate_rir(room, manifest.placement.wearer_mouth, geometry, pose)?,
    )?;
    let partner_wet = convolve_multichannel(
        &partner_dry,
        fs,
        &crate::room::simulate_rir(room, manifest.placement.partner, geometry, pose)?,
    )?;

    let main_len = wearer_dry.len() + gap + partner_dry.len();
    let mut bystander_wets = Vec::new();
    let mut bystander_lens = Vec::new();
    for (asset, position) in manifest
        .bystander_assets
        .iter()
        .zip(manifest.placement.bystanders.iter())
    {
        let mut dry = load_utterance(asset, fs)?;
        dry.truncate(main_len.max(1));
        bystander_lens.push(dry.len());
        let rirs = crate::room::simulate_rir(room, *position, geometry, pose)?;
        bystander_wets.push(convolve_multichannel(&dry, fs, &rirs)?);
    }

    // The timeline must leave room for a zero-overlap bystander placement.
    let longest_bystander = bystander_lens.iter().copied().max().unwrap_or(0);
    let pad = (0.1 * fs) as usize;
    let domain_end = (main_end + tail).max(main_end + pad + longest_bystander + pad);

    let mut bystander_offsets = Vec::new();
    let mut realized_overlap = Vec::new();
    for len in &bystander_lens {
        let offset = place_overlap(&main_active, *len, manifest.overlap_ratio, domain_end, &mut rng)?;
        realized_overlap.push(overlap_samples(&main_active, offset, *len) as f64 / *len as f64);
        bystander_offsets.push(offset);
    }

    // Final scene length covers every placed reverb tail.
    let mut scene_len = domain_end + tail;
    scene_len = scene_len.max(wearer_offset + wearer_wet.ncols());
    scene_len = scene_len.max(partner_offset + partner_wet.ncols());
    for (offset, wet) in bystander_offsets.iter().zip(bystander_wets.iter()) {
        scene_len = scene_len.max(offset + wet.ncols());
    }

    let place = |wet: &Array2<f64>, offset: usize| -> Array2<f64> {
        let mut out = Array2::zeros((mic_count, scene_len));
        for ch in 0..mic_count {
            for (i, v) in wet.row(ch).iter().enumerate() {
                let idx = offset + i;
                if idx < scene_len {
                    out[(ch, idx)] = *v;
                }
            }
        }
        out
    };

    let wearer_stem = place(&wearer_wet, wearer_offset);
    let partner_stem = place(&partner_wet, partner_offset);
    let bystander_stems: Vec<Array2<f64>> = bystander_offsets
        .iter()
        .zip(bystander_wets.iter())
        .map(|(offset, wet)| place(wet, *offset))
        .collect();

    // Noise covers the whole scene and is scaled against wearer+partner.
    let reference = geometry.reference_index;
    let (noise_stem, noise_gain, realized_snr_db) = match manifest.target_snr_db {
        None => (Array2::zeros((mic_count, scene_len)), 0.0, None),
        Some(target) => {
            let noise_dry = load_noise(&manifest.noise_asset, fs, scene_len, &mut rng)?;
            let noise_rirs =
                crate::room::simulate_rir(room, manifest.placement.noise, geometry, pose)?;
            let noise_wet = convolve_multichannel(&noise_dry, fs, &noise_rirs)?;
            let mut noise_stem = Array2::zeros((mic_count, scene_len));
            for ch in 0..mic_count {
                for i in 0..scene_len {
                    noise_stem[(ch, i)] = noise_wet[(ch, i)];
                }
            }
            let speech_ref: Vec<f64> = (0..scene_len)
                .map(|i| wearer_stem[(reference, i)] + partner_stem[(reference, i)])
                .collect();
            let noise_ref: Vec<f64> = noise_stem.row(reference).to_vec();
            let gain = snr_gain(&speech_ref, &noise_ref, target)?;
            noise_stem.mapv_inplace(|v| v * gain);
            let realized = 10.0
                * (mean_square(&speech_ref)
                    / mean_square(&noise_stem.row(reference).to_vec()))
                .log10();
            (noise_stem, gain, Some(realized))
        }
    };

    let mut mixture = wearer_stem.clone();
    mixture += &partner_stem;
    for stem in &bystander_stems {
        mixture += stem;
    }
    mixture += &noise_stem;

    Ok(SceneAudio {
        mixture,
        stems: SceneStems {
            wearer: wearer_stem,
            partner: partner_stem,
            bystanders: bystander_stems,
            noise: noise_stem,
        },
        alignment: SceneAlignment {
            scene_len,
            wearer: main_active[0],
            partner: main_active[1],
            bystanders: bystander_offsets
                .iter()
                .zip(bystander_lens.iter())
                .map(|(o, l)| (*o, o + l))
                .collect(),
            realized_overlap,
            noise_gain,
            realized_snr_db,
        },
        sample_rate_hz: fs,
    })
}

/// Batch-generation settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub root_seed: u64,
    pub scenes_per_scenario: usize,
    pub bystander_counts: Vec<usize>,
    /// Inclusive integer dB range the per-scene target SNR is drawn from.
    pub snr_range_db: [i32; 2],
    /// Overlap-ratio choices sampled per scene.
    pub overlap_ratios: Vec<f64>,
    pub ranges: SamplingRanges,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            root_seed: 0,
            scenes_per_scenario: 200,
            bystander_counts: vec![1, 2, 3],
            snr_range_db: [-8, 40],
            overlap_ratios: vec![0.05, 0.1, 0.2, 0.3, 0.4, 0.5],
            ranges: SamplingRanges::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetSceneEntry {
    pub scene_id: String,
    pub scenario: String,
    pub rel_path: String,
    pub seed: u64,
    pub bystanders: usize,
    pub target_snr_db: Option<f64>,
    pub overlap_ratio: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format: String,
    pub root_seed: u64,
    pub sample_rate_hz: f64,
    pub geometry: ArrayGeometry,
    pub scenes: Vec<DatasetSceneEntry>,
}

/// Per-scene file written next to the audio: the declarative manifest plus
/// the realized alignment.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SceneRecordFile {
    pub manifest: SceneManifest,
    pub alignment: SceneAlignment,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Scene seed derived from the dataset root seed and the global scene index.
pub fn derive_scene_seed(root_seed: u64, scene_index: u64) -> u64 {
    splitmix64(root_seed ^ splitmix64(scene_index.wrapping_add(1)))
}

/// Builds one scene manifest with draws on stream 0 of the scene seed.
pub fn build_manifest(
    seed: u64,
    scene_id: &str,
    scenario: &str,
    bystanders: usize,
    config: &DatasetConfig,
    assets: &AssetIndex,
    geometry: &ArrayGeometry,
) -> Result<SceneManifest> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let placement = sample_room(&mut rng, &config.ranges, geometry, bystanders)?;
    let pick = |rng: &mut ChaCha8Rng, list: &[AssetRef]| -> Result<AssetRef> {
        if list.is_empty() {
            return Err(Error::MissingAsset("empty asset list".into()));
        }
        Ok(list[rng.random_range(0..list.len())].clone())
    };
    let wearer_asset = pick(&mut rng, &assets.utterances)?;
    let partner_asset = pick(&mut rng, &assets.utterances)?;
    let bystander_assets = (0..bystanders)
        .map(|_| pick(&mut rng, &assets.utterances))
        .collect::<Result<Vec<_>>>()?;
    let noise_asset = pick(&mut rng, &assets.noises)?;
    let target_snr_db =
        Some(rng.random_range(config.snr_range_db[0]..=config.snr_range_db[1]) as f64);
    let overlap_ratio = config.overlap_ratios[rng.random_range(0..config.overlap_ratios.len())];
    Ok(SceneManifest {
        scene_id: scene_id.to_string(),
        scenario: scenario.to_string(),
        seed,
        sample_rate_hz: config.ranges.sample_rate_hz,
        placement,
        wearer_asset,
        partner_asset,
        bystander_assets,
        noise_asset,
        target_snr_db,
        overlap_ratio,
    })
}

/// Generates the full scenario grid under `out_dir`, one directory per
/// scenario, one subdirectory per scene. Rendering runs in parallel; all
/// randomness descends from per-scene seeds, so outputs do not depend on
/// scheduling.
pub fn generate_dataset(
    config: &DatasetConfig,
    assets: &AssetIndex,
    geometry: &ArrayGeometry,
    out_dir: impl AsRef<Path>,
) -> Result<DatasetManifest> {
    let out_dir = out_dir.as_ref();
    std::fs::create_dir_all(out_dir).map_err(|e| Error::file(out_dir, e))?;

    let mut planned: Vec<(SceneManifest, PathBuf, String)> = Vec::new();
    let mut entries: Vec<DatasetSceneEntry> = Vec::new();
    let mut global_index = 0u64;
    for bystanders in &config.bystander_counts {
        let scenario = format!("b{bystanders}");
        for i in 0..config.scenes_per_scenario {
            let seed = derive_scene_seed(config.root_seed, global_index);
            global_index += 1;
            let scene_id = format!("{scenario}_scene_{i:04}");
            let manifest = build_manifest(
                seed,
                &scene_id,
                &scenario,
                *bystanders,
                config,
                assets,
                geometry,
            )?;
            let rel_path = format!("{scenario}/{scene_id}");
            entries.push(DatasetSceneEntry {
                scene_id: scene_id.clone(),
                scenario: scenario.clone(),
                rel_path: rel_path.clone(),
                seed,
                bystanders: *bystanders,
                target_snr_db: manifest.target_snr_db,
                overlap_ratio: manifest.overlap_ratio,
            });
            planned.push((manifest, out_dir.join(&rel_path), scenario.clone()));
        }
    }

    planned
        .par_iter()
        .map(|(manifest, scene_dir, _)| write_scene(manifest, geometry, scene_dir))
        .collect::<Result<Vec<_>>>()?;

    let dataset = DatasetManifest {
        format: "glasswave-dataset-v1".into(),
        root_seed: config.root_seed,
        sample_rate_hz: config.ranges.sample_rate_hz,
        geometry: geometry.clone(),
        scenes: entries,
    };
    let path = out_dir.join("dataset.json");
    std::fs::write(&path, serde_json::to_string_pretty(&dataset)?)
        .map_err(|e| Error::file(&path, e))?;
    Ok(dataset)
}

/// Renders one scene directory: mixture, stems, and the scene record.
pub fn write_scene(
    manifest: &SceneManifest,
    geometry: &ArrayGeometry,
    scene_dir: impl AsRef<Path>,
) -> Result<SceneAudio> {
    let scene_dir = scene_dir.as_ref();
    let audio = synthesize_scene(manifest, geometry)?;
    let stems_dir = scene_dir.join("stems");
    std::fs::create_dir_all(&stems_dir).map_err(|e| Error::file(&stems_dir, e))?;
    wav::write_wav(scene_dir.join("mixture.wav"), audio.mixture.view(), audio.sample_rate_hz)?;
    wav::write_wav(stems_dir.join("wearer.wav"), audio.stems.wearer.view(), audio.sample_rate_hz)?;
    wav::write_wav(stems_dir.join("partner.wav"), audio.stems.partner.view(), audio.sample_rate_hz)?;
    for (i, stem) in audio.stems.bystanders.iter().enumerate() {
        wav::write_wav(stems_dir.join(format!("bystander_{i:02}.wav")), stem.view(), audio.sample_rate_hz)?;
    }
    wav::write_wav(stems_dir.join("noise.wav"), audio.stems.noise.view(), audio.sample_rate_hz)?;
    let record = SceneRecordFile {
        manifest: manifest.clone(),
        alignment: audio.alignment.clone(),
    };
    let path = scene_dir.join("manifest.json");
    std::fs::write(&path, serde_json::to_string_pretty(&record)?)
        .map_err(|e| Error::file(&path, e))?;
    Ok(audio)
}

pub fn load_dataset_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest> {
    let text = std::fs::read_to_string(path.as_ref()).map_err(|e| Error::file(path.as_ref(), e))?;
    let manifest: DatasetManifest = serde_json::from_str(&text)?;
    if manifest.format != "glasswave-dataset-v1" {
        return Err(Error::InvalidArgument(format!(
            "unsupported dataset format {:?}",
            manifest.format
        )));
    }
    Ok(manifest)
}

pub fn load_scene_record(path: impl AsRef<Path>) -> Result<SceneRecordFile> {
    let text = std::fs::read_to_string(path.as_ref()).map_err(|e| Error::file(path.as_ref(), e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Reloads a rendered scene directory into memory.
pub fn load_scene_audio(scene_dir: impl AsRef<Path>) -> Result<SceneAudio> {
    let scene_dir = scene_dir.as_ref();
    let record = load_scene_record(scene_dir.join("manifest.json"))?;
    let stems_dir = scene_dir.join("stems");
    let (mixture, fs) = wav::read_wav(scene_dir.join("mixture.wav"))?;
    let (wearer, _) = wav::read_wav(stems_dir.join("wearer.wav"))?;
    let (partner, _) = wav::read_wav(stems_dir.join("partner.wav"))?;
    let mut bystanders = Vec::new();
    for i in 0..record.manifest.bystander_count() {
        let (stem, _) = wav::read_wav(stems_dir.join(format!("bystander_{i:02}.wav")))?;
        bystanders.push(stem);
    }
    let (noise, _) = wav::read_wav(stems_dir.join("noise.wav"))?;
    Ok(SceneAudio {
        mixture,
        stems: SceneStems {
            wearer,
            partner,
            bystanders,
            noise,
        },
        alignment: record.alignment,
        sample_rate_hz: fs,
    })
}
