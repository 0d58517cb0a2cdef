//! Array simulation, GCC-PHAT features and DoA labels.
//!
//! Lag convention: in a GCC-PHAT segment for pair `(i, j)`, a positive lag
//! means channel `j` lags channel `i`. [`pair_tdoa`] is positive when the
//! wavefront reaches mic `j` before mic `i`, so the expected peak lag of a
//! pair is `-pair_tdoa * sample_rate` (see [`expected_lag`]).

use std::cell::RefCell;
use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::Arc;

use ndarray::Array2;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::{Error, Result, N_BINS};

pub const DEFAULT_SPEED_OF_SOUND: f64 = 343.0;
pub const DEFAULT_SAMPLE_RATE: f64 = 48_000.0;
pub const DEFAULT_FRAME_LENGTH: usize = 8192;
pub const DEFAULT_MAX_LAG: usize = 25;
/// Side of the default square array, in meters.
pub const DEFAULT_ARRAY_SIDE: f64 = 0.114;
/// Standard deviation of the Gaussian-smoothed DoA target, in degrees.
pub const LABEL_SIGMA_DEG: f64 = 5.0;

const SPECTRAL_FLOOR: f64 = 1e-12;
const NORM_FLOOR: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrayGeometry {
    mic_positions: Vec<[f64; 3]>,
    speed_of_sound: f64,
    sample_rate: f64,
    pairs: Vec<(usize, usize)>,
}

impl ArrayGeometry {
    pub fn new(mic_positions: Vec<[f64; 3]>, speed_of_sound: f64, sample_rate: f64) -> Result<Self> {
        let m = mic_positions.len();
        if m < 2 {
            return Err(Error::Geometry(format!("need at least 2 microphones, got {m}")));
        }
        if !(speed_of_sound > 0.0 && speed_of_sound.is_finite()) {
            return Err(Error::Geometry(format!("speed of sound must be positive, got {speed_of_sound}")));
        }
        if !(sample_rate > 0.0 && sample_rate.is_finite()) {
            return Err(Error::Geometry(format!("sample rate must be positive, got {sample_rate}")));
        }
        for (a, pa) in mic_positions.iter().enumerate() {
            if pa.iter().any(|v| !v.is_finite()) {
                return Err(Error::Geometry(format!("mic {a} has a non-finite coordinate")));
            }
            for (b, pb) in mic_positions.iter().enumerate().skip(a + 1) {
                if pa == pb {
                    return Err(Error::Geometry(format!("mics {a} and {b} share a position")));
                }
            }
        }
        let pairs = (0..m)
            .flat_map(|i| (i + 1..m).map(move |j| (i, j)))
            .collect();
        Ok(Self {
            mic_positions,
            speed_of_sound,
            sample_rate,
            pairs,
        })
    }

    /// Four mics on a horizontal square centered at the origin.
    pub fn square(side: f64, speed_of_sound: f64, sample_rate: f64) -> Result<Self> {
        let h = side / 2.0;
        Self::new(
            vec![[h, h, 0.0], [-h, h, 0.0], [-h, -h, 0.0], [h, -h, 0.0]],
            speed_of_sound,
            sample_rate,
        )
    }

    pub fn mic_positions(&self) -> &[[f64; 3]] {
        &self.mic_positions
    }

    pub fn n_mics(&self) -> usize {
        self.mic_positions.len()
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn n_pairs(&self) -> usize {
        self.pairs.len()
    }

    pub fn speed_of_sound(&self) -> f64 {
        self.speed_of_sound
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    /// Largest inter-mic distance expressed in samples.
    pub fn max_delay_samples(&self) -> f64 {
        self.pairs
            .iter()
            .map(|&(i, j)| distance(&self.mic_positions[i], &self.mic_positions[j]))
            .fold(0.0, f64::max)
            / self.speed_of_sound
            * self.sample_rate
    }
}

impl Default for ArrayGeometry {
    fn default() -> Self {
        Self::square(DEFAULT_ARRAY_SIDE, DEFAULT_SPEED_OF_SOUND, DEFAULT_SAMPLE_RATE)
            .expect("default geometry is valid")
    }
}

fn distance(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

fn unit_direction(doa_deg: f64) -> [f64; 3] {
    let t = doa_deg.to_radians();
    [t.cos(), t.sin(), 0.0]
}

fn dot(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// Far-field time difference of arrival for a pair, in seconds:
/// `(d_j - d_i) · u(θ) / c` with `u` pointing from the array toward the
/// source. Positive when mic `j` hears the wavefront first.
pub fn pair_tdoa(geometry: &ArrayGeometry, pair_index: usize, doa_deg: f64) -> Result<f64> {
    let &(i, j) = geometry.pairs.get(pair_index).ok_or(Error::PairIndex {
        index: pair_index,
        pairs: geometry.n_pairs(),
    })?;
    let di = &geometry.mic_positions[i];
    let dj = &geometry.mic_positions[j];
    let baseline = [dj[0] - di[0], dj[1] - di[1], dj[2] - di[2]];
    Ok(dot(&baseline, &unit_direction(doa_deg)) / geometry.speed_of_sound)
}

/// Lag (in samples, fractional) at which the GCC-PHAT segment of a pair peaks.
pub fn expected_lag(geometry: &ArrayGeometry, pair_index: usize, doa_deg: f64) -> Result<f64> {
    Ok(-pair_tdoa(geometry, pair_index, doa_deg)? * geometry.sample_rate)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultichannelFrame {
    samples: Array2<f64>,
    sample_rate: f64,
}

impl MultichannelFrame {
    pub fn new(samples: Array2<f64>, sample_rate: f64) -> Result<Self> {
        if samples.nrows() == 0 || samples.ncols() == 0 {
            return Err(Error::InvalidArgument("empty frame".into()));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn samples(&self) -> &Array2<f64> {
        &self.samples
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    pub fn n_channels(&self) -> usize {
        self.samples.nrows()
    }

    pub fn len(&self) -> usize {
        self.samples.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn channel(&self, c: usize) -> Vec<f64> {
        self.samples.row(c).to_vec()
    }
}

thread_local! {
    static PLANNER: RefCell<(FftPlanner<f64>, HashMap<(usize, bool), Arc<dyn Fft<f64>>>)> =
        RefCell::new((FftPlanner::new(), HashMap::new()));
}

fn fft_plan(len: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        let (planner, cache) = &mut *p;
        cache
            .entry((len, inverse))
            .or_insert_with(|| {
                if inverse {
                    planner.plan_fft_inverse(len)
                } else {
                    planner.plan_fft_forward(len)
                }
            })
            .clone()
    })
}

fn forward_fft(signal: &[f64], len: usize) -> Vec<Complex<f64>> {
    let mut buf: Vec<Complex<f64>> = signal.iter().map(|&x| Complex::new(x, 0.0)).collect();
    buf.resize(len, Complex::new(0.0, 0.0));
    fft_plan(len, false).process(&mut buf);
    buf
}

/// Multiplies a real signal's spectrum by a pure delay of `delay` samples
/// (circular, band-limited). Returns the delayed real signal.
fn fractional_delay(spectrum: &[Complex<f64>], delay: f64) -> Vec<f64> {
    let n = spectrum.len();
    let mut buf: Vec<Complex<f64>> = spectrum
        .iter()
        .enumerate()
        .map(|(k, &s)| {
            if 2 * k == n {
                // Nyquist bin must stay real.
                s * (PI * delay).cos()
            } else {
                let f = if 2 * k < n { k as f64 } else { k as f64 - n as f64 };
                s * Complex::from_polar(1.0, -2.0 * PI * f * delay / n as f64)
            }
        })
        .collect();
    fft_plan(n, true).process(&mut buf);
    buf.iter().map(|c| c.re / n as f64).collect()
}

/// Adds a circular (possibly fractional) delay to `signal`.
pub fn delay_signal(signal: &[f64], delay_samples: f64) -> Vec<f64> {
    fractional_delay(&forward_fft(signal, signal.len()), delay_samples)
}

/// Simulates a far-field white-noise source at `doa_deg`.
///
/// Each channel is the source delayed by its own arrival time relative to
/// the array origin; with `snr_db` set, independent white noise is added
/// per channel at that SNR relative to the channel's source power.
pub fn synth_frame(
    geometry: &ArrayGeometry,
    doa_deg: f64,
    snr_db: Option<f64>,
    length: usize,
    rng: &mut impl rand::Rng,
) -> Result<MultichannelFrame> {
    if length < 1024 {
        return Err(Error::InvalidArgument(format!("frame length {length} < 1024")));
    }
    let source: Vec<f64> = (0..length).map(|_| rng.sample(StandardNormal)).collect();
    let spectrum = forward_fft(&source, length);
    let u = unit_direction(doa_deg);
    let mut samples = Array2::zeros((geometry.n_mics(), length));
    for (m, pos) in geometry.mic_positions.iter().enumerate() {
        let delay = -dot(pos, &u) / geometry.speed_of_sound * geometry.sample_rate;
        let channel = fractional_delay(&spectrum, delay);
        samples.row_mut(m).assign(&ndarray::Array1::from(channel));
    }
    if let Some(snr) = snr_db {
        for mut row in samples.rows_mut() {
            let power = row.iter().map(|x| x * x).sum::<f64>() / length as f64;
            let std = (power / 10f64.powf(snr / 10.0)).sqrt();
            for x in row.iter_mut() {
                *x += std * rng.sample::<f64, _>(StandardNormal);
            }
        }
    }
    MultichannelFrame::new(samples, geometry.sample_rate)
}

fn fft_len(frame_len: usize) -> usize {
    (2 * frame_len).next_power_of_two()
}

fn phat_lags(xi: &[Complex<f64>], xj: &[Complex<f64>], max_lag: usize) -> Vec<f64> {
    let n = xi.len();
    let mut cross: Vec<Complex<f64>> = xi
        .iter()
        .zip(xj)
        .map(|(a, b)| {
            let c = a.conj() * b;
            let mag = c.norm();
            if mag < SPECTRAL_FLOOR {
                Complex::new(0.0, 0.0)
            } else {
                c / mag
            }
        })
        .collect();
    fft_plan(n, true).process(&mut cross);
    let scale = 1.0 / n as f64;
    let max_lag = max_lag as isize;
    (-max_lag..=max_lag)
        .map(|lag| cross[lag.rem_euclid(n as isize) as usize].re * scale)
        .collect()
}

/// GCC-PHAT between two channels, sliced to lags `-max_lag..=max_lag`.
///
/// Zero-padded to avoid circular wrap. Entry `max_lag + k` is the
/// phase-transform correlation at lag `k`; a positive peak lag means
/// channel `j` lags channel `i`. A silent channel yields all zeros.
pub fn gcc_phat(frame: &MultichannelFrame, channel_i: usize, channel_j: usize, max_lag: usize) -> Result<Vec<f64>> {
    let channels = frame.n_channels();
    for c in [channel_i, channel_j] {
        if c >= channels {
            return Err(Error::Channel { index: c, channels });
        }
    }
    if 2 * max_lag >= frame.len() {
        return Err(Error::InvalidArgument(format!(
            "max_lag {max_lag} must be below half the frame length {}",
            frame.len()
        )));
    }
    let n = fft_len(frame.len());
    let xi = forward_fft(&frame.channel(channel_i), n);
    let xj = forward_fft(&frame.channel(channel_j), n);
    Ok(phat_lags(&xi, &xj, max_lag))
}

/// Concatenated per-pair GCC-PHAT segments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GccFeature {
    values: Vec<f64>,
    segment_len: usize,
}

impl GccFeature {
    pub fn new(values: Vec<f64>, segment_len: usize) -> Result<Self> {
        if segment_len == 0 || values.len() % segment_len != 0 {
            return Err(Error::Dimension {
                context: "feature segments",
                expected: segment_len.max(1) * (values.len() / segment_len.max(1)).max(1),
                actual: values.len(),
            });
        }
        Ok(Self { values, segment_len })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn segment_len(&self) -> usize {
        self.segment_len
    }

    pub fn n_segments(&self) -> usize {
        self.values.len() / self.segment_len
    }

    pub fn segment(&self, k: usize) -> &[f64] {
        &self.values[k * self.segment_len..(k + 1) * self.segment_len]
    }

    pub fn segment_mut(&mut self, k: usize) -> &mut [f64] {
        let d = self.segment_len;
        &mut self.values[k * d..(k + 1) * d]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Scales every segment by its max magnitude (floored at 1e-9).
    pub fn normalize(&mut self) {
        let d = self.segment_len;
        for seg in self.values.chunks_mut(d) {
            normalize_segment(seg);
        }
    }
}

fn normalize_segment(seg: &mut [f64]) {
    let peak = seg.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(NORM_FLOOR);
    for v in seg.iter_mut() {
        *v /= peak;
    }
}

/// GCC-PHAT of every pair in geometry order, each segment normalized to [-1, 1].
pub fn extract_features(frame: &MultichannelFrame, geometry: &ArrayGeometry, max_lag: usize) -> Result<GccFeature> {
    if frame.n_channels() != geometry.n_mics() {
        return Err(Error::Dimension {
            context: "frame channels vs geometry",
            expected: geometry.n_mics(),
            actual: frame.n_channels(),
        });
    }
    if 2 * max_lag >= frame.len() {
        return Err(Error::InvalidArgument(format!("max_lag {max_lag} too large for frame")));
    }
    let n = fft_len(frame.len());
    let spectra: Vec<Vec<Complex<f64>>> = (0..frame.n_channels())
        .map(|c| forward_fft(&frame.channel(c), n))
        .collect();
    let d = 2 * max_lag + 1;
    let mut values = Vec::with_capacity(geometry.n_pairs() * d);
    for &(i, j) in geometry.pairs() {
        let mut seg = phat_lags(&spectra[i], &spectra[j], max_lag);
        normalize_segment(&mut seg);
        values.extend(seg);
    }
    GccFeature::new(values, d)
}

/// Minimum distance between two bins on the 360-bin circle.
pub fn circular_bin_distance(a: usize, b: usize) -> usize {
    let d = a.abs_diff(b) % N_BINS;
    d.min(N_BINS - d)
}

/// Circularly wrapped Gaussian target with σ = 5°, peak exactly 1 at `doa_deg`.
pub fn gaussian_label(doa_deg: i64) -> Result<Vec<f64>> {
    if !(0..N_BINS as i64).contains(&doa_deg) {
        return Err(Error::DoaRange(doa_deg));
    }
    let two_var = 2.0 * LABEL_SIGMA_DEG * LABEL_SIGMA_DEG;
    Ok((0..N_BINS)
        .map(|b| {
            let d = circular_bin_distance(b, doa_deg as usize) as f64;
            (-d * d / two_var).exp()
        })
        .collect())
}

pub fn onehot_label(doa_deg: i64) -> Result<Vec<f64>> {
    if !(0..N_BINS as i64).contains(&doa_deg) {
        return Err(Error::DoaRange(doa_deg));
    }
    let mut y = vec![0.0; N_BINS];
    y[doa_deg as usize] = 1.0;
    Ok(y)
}

/// A feature with its DoA class. The one-hot and smoothed targets are
/// derived from `doa_deg` on demand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSample {
    pub feature: GccFeature,
    pub doa_deg: u16,
}

impl LabeledSample {
    pub fn new(feature: GccFeature, doa_deg: u16) -> Result<Self> {
        if doa_deg as usize >= N_BINS {
            return Err(Error::DoaRange(doa_deg as i64));
        }
        Ok(Self { feature, doa_deg })
    }

    pub fn class(&self) -> usize {
        self.doa_deg as usize
    }

    pub fn onehot(&self) -> Vec<f64> {
        onehot_label(self.doa_deg as i64).expect("doa validated at construction")
    }

    pub fn smooth(&self) -> Vec<f64> {
        gaussian_label(self.doa_deg as i64).expect("doa validated at construction")
    }
}
