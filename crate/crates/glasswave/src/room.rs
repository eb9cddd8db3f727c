//! Shoebox-room acoustics via the image-source method, and multichannel
//! reverberant rendering.

use std::f64::consts::PI;

use ndarray::Array2;
use num_complex::Complex64;
use rand::Rng;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{ArrayGeometry, SPEED_OF_SOUND};

/// Half-width of the fractional-delay interpolator; the full kernel spans
/// `2 * FRACTIONAL_DELAY_HALF_TAPS + 1 = 81` taps.
pub const FRACTIONAL_DELAY_HALF_TAPS: usize = 40;

/// Image enumeration stops early once a whole reflection order has dropped
/// this far below the direct path.
pub const ENERGY_CUTOFF_DB: f64 = 60.0;

pub const DEFAULT_MAX_ORDER: usize = 17;

/// Shoebox room: dimensions, per-wall pressure reflection coefficients
/// (order: x=0, x=Lx, y=0, y=Ly, z=0, z=Lz), and simulation settings.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RoomSpec {
    pub dimensions: [f64; 3],
    pub reflection: [f64; 6],
    pub max_order: usize,
    pub sample_rate_hz: f64,
}

impl RoomSpec {
    pub fn new(dimensions: [f64; 3], reflection: [f64; 6], sample_rate_hz: f64) -> Result<Self> {
        let spec = RoomSpec {
            dimensions,
            reflection,
            max_order: DEFAULT_MAX_ORDER,
            sample_rate_hz,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dimensions.iter().any(|d| !(*d > 0.0)) {
            return Err(Error::InvalidRoom(format!(
                "dimensions must be positive, got {:?}",
                self.dimensions
            )));
        }
        if self.reflection.iter().any(|b| !(0.0..1.0).contains(b)) {
            return Err(Error::InvalidRoom(format!(
                "reflection coefficients must lie in [0, 1), got {:?}",
                self.reflection
            )));
        }
        if !(self.sample_rate_hz > 0.0) {
            return Err(Error::InvalidRoom("sample rate must be positive".into()));
        }
        Ok(())
    }

    fn contains(&self, p: &[f64; 3]) -> bool {
        (0..3).all(|i| p[i] > 0.0 && p[i] < self.dimensions[i])
    }
}

/// Uniform pressure reflection coefficient that yields roughly the requested
/// RT60 in the given room (Eyring absorption).
pub fn reflection_for_rt60(dimensions: [f64; 3], rt60_s: f64) -> Result<f64> {
    if !(rt60_s > 0.0) {
        return Err(Error::InvalidArgument("rt60 must be positive".into()));
    }
    let [lx, ly, lz] = dimensions;
    let volume = lx * ly * lz;
    let surface = 2.0 * (lx * ly + lx * lz + ly * lz);
    let alpha = 1.0 - (-0.161 * volume / (surface * rt60_s)).exp();
    if !(0.0..1.0).contains(&alpha) {
        return Err(Error::InvalidArgument(format!(
            "rt60 {rt60_s} s is unreachable in a {dimensions:?} room"
        )));
    }
    Ok((1.0 - alpha).sqrt())
}

/// Array placement in the room: position of the array origin plus a yaw
/// rotation about +z.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct ArrayPose {
    pub position: [f64; 3],
    pub yaw_rad: f64,
}

impl ArrayPose {
    pub fn to_room(&self, local: &[f64; 3]) -> [f64; 3] {
        let (sin, cos) = self.yaw_rad.sin_cos();
        [
            self.position[0] + cos * local[0] - sin * local[1],
            self.position[1] + sin * local[0] + cos * local[1],
            self.position[2] + local[2],
        ]
    }
}

/// Impulse responses from one source to every microphone.
#[derive(Debug, Clone)]
pub struct RirSet {
    /// `[mics x taps]`.
    pub taps: Array2<f64>,
    pub sample_rate_hz: f64,
    pub source_position: [f64; 3],
    pub mic_positions: Vec<[f64; 3]>,
    /// Direct-path delay per mic, fractional samples.
    pub direct_delay_samples: Vec<f64>,
    /// Image arrivals that contributed per mic.
    pub arrival_counts: Vec<usize>,
}

impl RirSet {
    pub fn mic_count(&self) -> usize {
        self.taps.nrows()
    }

    /// Index of the strongest tap for one mic.
    pub fn peak_index(&self, mic: usize) -> usize {
        let row = self.taps.row(mic);
        let mut best = 0;
        let mut best_mag = 0.0;
        for (i, v) in row.iter().enumerate() {
            if v.abs() > best_mag {
                best_mag = v.abs();
                best = i;
            }
        }
        best
    }

    pub fn energy(&self, mic: usize) -> f64 {
        self.taps.row(mic).iter().map(|v| v * v).sum()
    }
}

/// Simulates the room impulse response from `source` to every microphone of
/// the posed array by enumerating image sources.
///
/// Each image contributes `prod(beta_walls) / (4 pi d)` at delay `d/c * fs`,
/// placed with an 81-tap Hann-windowed sinc so inter-channel fractional
/// delays survive. Enumeration walks reflection orders outward and stops at
/// `max_order` or once an entire order falls 60 dB below the direct path.
pub fn simulate_rir(
    room: &RoomSpec,
    source: [f64; 3],
    geometry: &ArrayGeometry,
    pose: &ArrayPose,
) -> Result<RirSet> {
    room.validate()?;
    geometry.validate()?;
    if !room.contains(&source) {
        return Err(Error::InvalidRoom(format!(
            "source {source:?} outside the {:?} room",
            room.dimensions
        )));
    }
    let mic_positions: Vec<[f64; 3]> = geometry.mics.iter().map(|m| pose.to_room(m)).collect();
    for (i, mic) in mic_positions.iter().enumerate() {
        if !room.contains(mic) {
            return Err(Error::InvalidRoom(format!(
                "mic {i} at {mic:?} outside the {:?} room",
                room.dimensions
            )));
        }
        if distance(mic, &source) < 1e-6 {
            return Err(Error::DegenerateGeometry { mic_index: i });
        }
    }

    let c = SPEED_OF_SOUND;
    let fs = room.sample_rate_hz;
    let mut arrivals: Vec<Vec<(f64, f64)>> = vec![Vec::new(); mic_positions.len()];
    let direct_amp = mic_positions
        .iter()
        .map(|mic| 1.0 / (4.0 * PI * distance(mic, &source)))
        .fold(0.0f64, f64::max);
    let cutoff_amp = direct_amp * 10f64.powf(-ENERGY_CUTOFF_DB / 20.0);

    for order in 0..=room.max_order {
        let mut order_peak = 0.0f64;
        for_each_image(room, &source, order, |image, gain| {
            for (mic_index, mic) in mic_positions.iter().enumerate() {
                let d = distance(mic, &image);
                let amp = gain / (4.0 * PI * d);
                order_peak = order_peak.max(amp.abs());
                arrivals[mic_index].push((amp, d / c * fs));
            }
        });
        if order > 0 && order_peak < cutoff_amp {
            break;
        }
    }

    let max_delay = arrivals
        .iter()
        .flat_map(|list| list.iter().map(|(_, d)| *d))
        .fold(0.0f64, f64::max);
    let taps_len = max_delay.ceil() as usize + FRACTIONAL_DELAY_HALF_TAPS + 2;
    let mut taps = Array2::zeros((mic_positions.len(), taps_len));
    for (mic_index, list) in arrivals.iter().enumerate() {
        for (amp, delay) in list {
            place_fractional_impulse(taps.row_mut(mic_index).into_slice().unwrap(), *amp, *delay);
        }
    }

    let direct_delay_samples = mic_positions
        .iter()
        .map(|mic| distance(mic, &source) / c * fs)
        .collect();
    let arrival_counts = arrivals.iter().map(|list| list.len()).collect();
    Ok(RirSet {
        taps,
        sample_rate_hz: fs,
        source_position: source,
        mic_positions,
        direct_delay_samples,
        arrival_counts,
    })
}

fn distance(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// Visits every image source of exactly the given reflection order with its
/// accumulated wall gain.
fn for_each_image(
    room: &RoomSpec,
    source: &[f64; 3],
    order: usize,
    mut visit: impl FnMut([f64; 3], f64),
) {
    let order = order as i64;
    let [lx, ly, lz] = room.dimensions;
    let [bx0, bx1, by0, by1, bz0, bz1] = room.reflection;
    for q in 0..=1i64 {
        for mx in mirror_range(q, order) {
            let ox = (2 * mx - q).abs();
            if ox > order {
                continue;
            }
            for j in 0..=1i64 {
                for my in mirror_range(j, order - ox) {
                    let oy = (2 * my - j).abs();
                    if ox + oy > order {
                        continue;
                    }
                    for k in 0..=1i64 {
                        for mz in mirror_range(k, order - ox - oy) {
                            let oz = (2 * mz - k).abs();
                            if ox + oy + oz != order {
                                continue;
                            }
                            let image = [
                                (1 - 2 * q) as f64 * source[0] + 2.0 * mx as f64 * lx,
                                (1 - 2 * j) as f64 * source[1] + 2.0 * my as f64 * ly,
                                (1 - 2 * k) as f64 * source[2] + 2.0 * mz as f64 * lz,
                            ];
                            let gain = bx0.powi((mx - q).unsigned_abs() as i32)
                                * bx1.powi(mx.unsigned_abs() as i32)
                                * by0.powi((my - j).unsigned_abs() as i32)
                                * by1.powi(my.unsigned_abs() as i32)
                                * bz0.powi((mz - k).unsigned_abs() as i32)
                                * bz1.powi(mz.unsigned_abs() as i32);
                            if gain != 0.0 {
                                visit(image, gain);
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Integer mirror indices `m` with `|2m - q| <= bound`.
fn mirror_range(q: i64, bound: i64) -> std::ops::RangeInclusive<i64> {
    let lo = (q - bound).div_euclid(2) + ((q - bound).rem_euclid(2) != 0) as i64;
    let hi = (q + bound).div_euclid(2);
    lo..=hi
}

/// Adds an 81-tap Hann-windowed sinc at a fractional delay.
fn place_fractional_impulse(taps: &mut [f64], amplitude: f64, delay_samples: f64) {
    let half = FRACTIONAL_DELAY_HALF_TAPS as f64;
    let width = 2.0 * half + 1.0;
    let first = ((delay_samples - half).ceil().max(0.0)) as usize;
    let last = ((delay_samples + half).floor()) as usize;
    for j in first..=last.min(taps.len().saturating_sub(1)) {
        let u = j as f64 - delay_samples;
        let window = 0.5 * (1.0 + (2.0 * PI * u / width).cos());
        taps[j] += amplitude * window * normalized_sinc(u);
    }
}

fn normalized_sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

/// FFT-based full linear convolution of the dry signal with every mic's
/// impulse response; output is `[mics x (signal + taps - 1)]`.
pub fn convolve_multichannel(
    signal: &[f64],
    signal_sample_rate_hz: f64,
    rirs: &RirSet,
) -> Result<Array2<f64>> {
    if (signal_sample_rate_hz - rirs.sample_rate_hz).abs() > 1e-9 {
        return Err(Error::SampleRateMismatch {
            left: signal_sample_rate_hz,
            right: rirs.sample_rate_hz,
        });
    }
    if signal.is_empty() {
        return Err(Error::TooShort { len: 0, min: 1 });
    }
    let taps_len = rirs.taps.ncols();
    let out_len = signal.len() + taps_len - 1;
    let fft_len = out_len.next_power_of_two();
    let mut planner = FftPlanner::new();
    let forward = planner.plan_fft_forward(fft_len);
    let inverse = planner.plan_fft_inverse(fft_len);

    let mut signal_fd = vec![Complex64::ZERO; fft_len];
    for (i, v) in signal.iter().enumerate() {
        signal_fd[i] = Complex64::new(*v, 0.0);
    }
    forward.process(&mut signal_fd);

    let mut out = Array2::zeros((rirs.mic_count(), out_len));
    for mic in 0..rirs.mic_count() {
        let mut rir_fd = vec![Complex64::ZERO; fft_len];
        for (i, v) in rirs.taps.row(mic).iter().enumerate() {
            rir_fd[i] = Complex64::new(*v, 0.0);
        }
        forward.process(&mut rir_fd);
        for (s, r) in rir_fd.iter_mut().zip(signal_fd.iter()) {
            *s *= *r;
        }
        inverse.process(&mut rir_fd);
        for i in 0..out_len {
            out[(mic, i)] = rir_fd[i].re / fft_len as f64;
        }
    }
    Ok(out)
}

/// Sampling policy for random rooms and talker placements.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SamplingRanges {
    pub dims_min: [f64; 3],
    pub dims_max: [f64; 3],
    pub reflection_min: f64,
    pub reflection_max: f64,
    pub max_order: usize,
    pub wall_margin: f64,
    pub partner_distance: [f64; 2],
    pub partner_half_sector_deg: f64,
    pub bystander_distance: [f64; 2],
    pub sample_rate_hz: f64,
}

impl Default for SamplingRanges {
    fn default() -> Self {
        SamplingRanges {
            dims_min: [5.0, 5.0, 2.0],
            dims_max: [10.0, 10.0, 6.0],
            reflection_min: 0.3,
            reflection_max: 0.75,
            max_order: DEFAULT_MAX_ORDER,
            wall_margin: 0.3,
            partner_distance: [1.0, 2.5],
            partner_half_sector_deg: 45.0,
            bystander_distance: [1.5, 4.0],
            sample_rate_hz: 16_000.0,
        }
    }
}

/// A sampled room plus everyone's position in it.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ScenePlacement {
    pub room: RoomSpec,
    pub pose: ArrayPose,
    pub wearer_mouth: [f64; 3],
    pub partner: [f64; 3],
    pub bystanders: Vec<[f64; 3]>,
    pub noise: [f64; 3],
}

/// Wearer-mouth offset in the array frame when the geometry does not carry
/// one: 8 cm forward and 8 cm below the array origin.
pub const DEFAULT_MOUTH_OFFSET: [f64; 3] = [0.08, 0.0, -0.08];

const PLACEMENT_TRIES: usize = 1000;

/// Draws a room, array pose, and source placements. Deterministic for a
/// given RNG state; draws happen in a fixed order.
pub fn sample_room(
    rng: &mut impl Rng,
    ranges: &SamplingRanges,
    geometry: &ArrayGeometry,
    bystanders: usize,
) -> Result<ScenePlacement> {
    let mut dims = [0.0; 3];
    for i in 0..3 {
        dims[i] = if ranges.dims_min[i] < ranges.dims_max[i] {
            rng.random_range(ranges.dims_min[i]..ranges.dims_max[i])
        } else {
            ranges.dims_min[i]
        };
    }
    let mut reflection = [0.0; 6];
    for value in reflection.iter_mut() {
        *value = rng.random_range(ranges.reflection_min..ranges.reflection_max);
    }
    let mut room = RoomSpec::new(dims, reflection, ranges.sample_rate_hz)?;
    room.max_order = ranges.max_order;

    let margin = ranges.wall_margin;
    if dims[2] - margin <= 1.2 || dims.iter().any(|d| *d <= 2.0 * margin) {
        return Err(Error::PlacementFailure(format!(
            "room {dims:?} too small for a head-height array with {margin} m wall margin"
        )));
    }
    let mouth_offset = geometry.mouth.unwrap_or(DEFAULT_MOUTH_OFFSET);

    // Head position and partner are placed together: the partner must fit in
    // the frontal sector, which constrains how close to a wall the wearer
    // can stand.
    for _try in 0..PLACEMENT_TRIES {
        let pose = ArrayPose {
            position: [
                rng.random_range(margin..dims[0] - margin),
                rng.random_range(margin..dims[1] - margin),
                rng.random_range(1.2..(1.8f64).min(dims[2] - margin)),
            ],
            yaw_rad: rng.random_range(0.0..2.0 * PI),
        };
        let wearer_mouth = pose.to_room(&mouth_offset);
        let partner_azimuth = pose.yaw_rad
            + rng
                .random_range(-ranges.partner_half_sector_deg..ranges.partner_half_sector_deg)
                .to_radians();
        let partner_distance = rng.random_range(ranges.partner_distance[0]..ranges.partner_distance[1]);
        let partner = [
            pose.position[0] + partner_distance * partner_azimuth.cos(),
            pose.position[1] + partner_distance * partner_azimuth.sin(),
            (pose.position[2] + rng.random_range(-0.2..0.2)).clamp(margin, dims[2] - margin),
        ];
        if inside_with_margin(&wearer_mouth, &dims, margin)
            && inside_with_margin(&partner, &dims, margin)
        {
            let bystanders = (0..bystanders)
                .map(|_| {
                    sample_ring(
                        rng,
                        &pose,
                        ranges.bystander_distance,
                        &dims,
                        margin,
                    )
                })
                .collect::<Result<Vec<_>>>()?;
            let noise = [
                rng.random_range(margin..dims[0] - margin),
                rng.random_range(margin..dims[1] - margin),
                rng.random_range(margin..dims[2] - margin),
            ];
            return Ok(ScenePlacement {
                room,
                pose,
                wearer_mouth,
                partner,
                bystanders,
                noise,
            });
        }
    }
    Err(Error::PlacementFailure(format!(
        "no wearer/partner placement found in a {dims:?} room after {PLACEMENT_TRIES} tries"
    )))
}

fn sample_ring(
    rng: &mut impl Rng,
    pose: &ArrayPose,
    distance_range: [f64; 2],
    dims: &[f64; 3],
    margin: f64,
) -> Result<[f64; 3]> {
    for _ in 0..PLACEMENT_TRIES {
        let azimuth = rng.random_range(0.0..2.0 * PI);
        let d = rng.random_range(distance_range[0]..distance_range[1]);
        let p = [
            pose.position[0] + d * azimuth.cos(),
            pose.position[1] + d * azimuth.sin(),
            (pose.position[2] + rng.random_range(-0.3..0.3)).clamp(margin, dims[2] - margin),
        ];
        if inside_with_margin(&p, dims, margin) {
            return Ok(p);
        }
    }
    Err(Error::PlacementFailure(format!(
        "no bystander placement at {distance_range:?} m fits a {dims:?} room"
    )))
}

fn inside_with_margin(p: &[f64; 3], dims: &[f64; 3], margin: f64) -> bool {
    (0..3).all(|i| p[i] >= margin && p[i] <= dims[i] - margin)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn flat_room(reflection: f64) -> RoomSpec {
        RoomSpec::new([6.0, 5.0, 3.0], [reflection; 6], 16_000.0).unwrap()
    }

    fn centered_pose() -> ArrayPose {
        ArrayPose {
            position: [3.0, 2.5, 1.5],
            yaw_rad: 0.0,
        }
    }

    #[test]
    fn direct_path_only_has_single_arrival_at_expected_delay() {
        let mut room = flat_room(0.6);
        room.max_order = 0;
        let geometry = ArrayGeometry::new("mono", vec![[0.0, 0.0, 0.0]], 0).unwrap();
        let source = [4.0, 3.5, 1.5];
        let rirs = simulate_rir(&room, source, &geometry, &centered_pose()).unwrap();
        assert_eq!(rirs.arrival_counts[0], 1);
        let d = ((4.0f64 - 3.0).powi(2) + (3.5f64 - 2.5).powi(2)).sqrt();
        let expected = d / SPEED_OF_SOUND * 16_000.0;
        let peak = rirs.peak_index(0) as f64;
        assert!((peak - expected).abs() <= 1.0, "peak {peak} vs {expected}");
        // DC gain of the windowed sinc is ~1, so the tap sum recovers 1/(4 pi d).
        let tap_sum: f64 = rirs.taps.row(0).iter().sum();
        let amp = 1.0 / (4.0 * PI * d);
        assert!((tap_sum - amp).abs() / amp < 0.01);
    }

    #[test]
    fn first_order_has_exactly_seven_arrivals() {
        let mut room = flat_room(0.5);
        room.max_order = 1;
        let geometry = ArrayGeometry::new("mono", vec![[0.0, 0.0, 0.0]], 0).unwrap();
        let rirs = simulate_rir(&room, [4.0, 3.5, 1.7], &geometry, &centered_pose()).unwrap();
        assert_eq!(rirs.arrival_counts[0], 7);
    }

    #[test]
    fn zero_reflection_matches_direct_only() {
        let geometry = ArrayGeometry::glasses_preset();
        let source = [4.0, 3.5, 1.6];
        let mut absorbing = flat_room(0.0);
        absorbing.max_order = 10;
        let with_images = simulate_rir(&absorbing, source, &geometry, &centered_pose()).unwrap();
        let mut direct = flat_room(0.0);
        direct.max_order = 0;
        let direct_only = simulate_rir(&direct, source, &geometry, &centered_pose()).unwrap();
        for mic in 0..7 {
            let a = with_images.taps.row(mic);
            let b = direct_only.taps.row(mic);
            let n = a.len().min(b.len());
            for i in 0..n {
                assert!((a[i] - b[i]).abs() < 1e-15);
            }
            assert!(a.iter().skip(n).all(|v| *v == 0.0));
        }
    }

    #[test]
    fn rir_energy_grows_with_reflectivity() {
        let geometry = ArrayGeometry::new("mono", vec![[0.0, 0.0, 0.0]], 0).unwrap();
        let source = [4.2, 3.1, 1.4];
        let energies: Vec<f64> = [0.2, 0.5, 0.8]
            .iter()
            .map(|beta| {
                let room = flat_room(*beta);
                simulate_rir(&room, source, &geometry, &centered_pose())
                    .unwrap()
                    .energy(0)
            })
            .collect();
        assert!(energies[0] < energies[1] && energies[1] < energies[2]);
    }

    #[test]
    fn rejects_out_of_room_and_coincident_placements() {
        let room = flat_room(0.5);
        let geometry = ArrayGeometry::new("mono", vec![[0.0, 0.0, 0.0]], 0).unwrap();
        assert!(simulate_rir(&room, [7.0, 1.0, 1.0], &geometry, &centered_pose()).is_err());
        let on_mic = centered_pose().position;
        assert!(matches!(
            simulate_rir(&room, on_mic, &geometry, &centered_pose()),
            Err(Error::DegenerateGeometry { .. })
        ));
        let outside_pose = ArrayPose {
            position: [6.1, 2.0, 1.5],
            yaw_rad: 0.0,
        };
        assert!(simulate_rir(&room, [3.0, 2.0, 1.5], &geometry, &outside_pose).is_err());
    }

    #[test]
    fn simulate_rir_is_deterministic() {
        let room = flat_room(0.55);
        let geometry = ArrayGeometry::glasses_preset();
        let a = simulate_rir(&room, [4.0, 3.0, 1.5], &geometry, &centered_pose()).unwrap();
        let b = simulate_rir(&room, [4.0, 3.0, 1.5], &geometry, &centered_pose()).unwrap();
        assert_eq!(a.taps, b.taps);
    }

    #[test]
    fn convolution_identity_delay_and_oracle() {
        let geometry = ArrayGeometry::new("mono", vec![[0.0, 0.0, 0.0]], 0).unwrap();
        let signal: Vec<f64> = (0..400).map(|i| ((i * 37) % 83) as f64 / 83.0 - 0.5).collect();

        // Unit impulse at tap 0 passes the signal through.
        let mut unit = RirSet {
            taps: Array2::zeros((1, 1)),
            sample_rate_hz: 16_000.0,
            source_position: [0.0; 3],
            mic_positions: vec![geometry.mics[0]],
            direct_delay_samples: vec![0.0],
            arrival_counts: vec![1],
        };
        unit.taps[(0, 0)] = 1.0;
        let out = convolve_multichannel(&signal, 16_000.0, &unit).unwrap();
        for (i, v) in signal.iter().enumerate() {
            assert!((out[(0, i)] - v).abs() < 1e-12);
        }

        // Impulse at tap 100 delays by 100 samples.
        let mut delayed = RirSet {
            taps: Array2::zeros((1, 101)),
            ..unit.clone()
        };
        delayed.taps[(0, 100)] = 1.0;
        let out = convolve_multichannel(&signal, 16_000.0, &delayed).unwrap();
        for (i, v) in signal.iter().enumerate() {
            assert!((out[(0, i + 100)] - v).abs() < 1e-12);
        }

        // FFT path matches the direct time-domain sum.
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        use rand::Rng as _;
        let long: Vec<f64> = (0..16_000).map(|_| rng.random_range(-1.0f64..1.0)).collect();
        let mut taps = Array2::zeros((1, 4096));
        for v in taps.iter_mut() {
            *v = rng.random_range(-0.05f64..0.05);
        }
        let random_rir = RirSet {
            taps,
            ..unit.clone()
        };
        let fast = convolve_multichannel(&long, 16_000.0, &random_rir).unwrap();
        let direct = |n: usize| -> f64 {
            let mut acc = 0.0;
            for k in 0..4096usize {
                if n >= k && n - k < long.len() {
                    acc += random_rir.taps[(0, k)] * long[n - k];
                }
            }
            acc
        };
        for n in (0..fast.ncols()).step_by(997) {
            assert!((fast[(0, n)] - direct(n)).abs() < 1e-9);
        }

        assert!(matches!(
            convolve_multichannel(&signal, 44_100.0, &unit),
            Err(Error::SampleRateMismatch { .. })
        ));
    }

    #[test]
    fn sampled_rooms_stay_in_range_and_are_deterministic() {
        let geometry = ArrayGeometry::glasses_preset();
        let ranges = SamplingRanges::default();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..200 {
            let placement = sample_room(&mut rng, &ranges, &geometry, 2).unwrap();
            let dims = placement.room.dimensions;
            assert!((5.0..=10.0).contains(&dims[0]));
            assert!((5.0..=10.0).contains(&dims[1]));
            assert!((2.0..=6.0).contains(&dims[2]));
            assert_eq!(placement.bystanders.len(), 2);
        }
        let mut rng_a = ChaCha8Rng::seed_from_u64(7);
        let mut rng_b = ChaCha8Rng::seed_from_u64(7);
        let a = sample_room(&mut rng_a, &ranges, &geometry, 3).unwrap();
        let b = sample_room(&mut rng_b, &ranges, &geometry, 3).unwrap();
        assert_eq!(a, b);

        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let none = sample_room(&mut rng, &ranges, &geometry, 0).unwrap();
        assert!(none.bystanders.is_empty());
    }

    #[test]
    fn eyring_reflection_is_reasonable() {
        let beta = reflection_for_rt60([6.0, 5.0, 3.0], 0.4).unwrap();
        assert!((0.0..1.0).contains(&beta));
        assert!(reflection_for_rt60([6.0, 5.0, 3.0], -1.0).is_err());
    }
}
