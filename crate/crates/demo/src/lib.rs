//! Browser bindings for three interactive views: GCC-PHAT features of a
//! simulated frame, a peak-shift augmentation preview, and the long-tail
//! count / Gini / adaptive-γ relationship.

use ssl_gcil::adir::{adaptive_gamma, gini};
use ssl_gcil::augment::{augment_sample, peak_stats};
use ssl_gcil::harness::class_counts;
use ssl_gcil::seed;
use ssl_gcil::signal::{expected_lag, extract_features, synth_frame, ArrayGeometry, LabeledSample};
use wasm_bindgen::prelude::*;

const FRAME: usize = 4096;
const MAX_LAG: usize = 25;

fn js_err(e: ssl_gcil::Error) -> JsError {
    JsError::new(&e.to_string())
}

fn snr(db: f64) -> Option<f64> {
    db.is_finite().then_some(db)
}

fn sample(geometry: &ArrayGeometry, doa: f64, snr_db: Option<f64>, rng: &mut seed::Rng) -> Result<LabeledSample, JsError> {
    let frame = synth_frame(geometry, doa, snr_db, FRAME, rng).map_err(js_err)?;
    let feature = extract_features(&frame, geometry, MAX_LAG).map_err(js_err)?;
    LabeledSample::new(feature, doa.round().rem_euclid(360.0) as u16).map_err(js_err)
}

/// Six concatenated 51-lag segments for a source at `doa_deg`. A
/// non-finite `snr_db` renders a noiseless frame.
#[wasm_bindgen]
pub fn gcc_features(doa_deg: f64, snr_db: f64, seed_value: u32) -> Result<Vec<f64>, JsError> {
    let geometry = ArrayGeometry::default();
    let mut rng = seed::rng(u64::from(seed_value), &[]);
    Ok(sample(&geometry, doa_deg, snr(snr_db), &mut rng)?.feature.into_values())
}

/// Geometric lag (in samples) of each microphone pair for `doa_deg`.
#[wasm_bindgen]
pub fn expected_lags(doa_deg: f64) -> Result<Vec<f64>, JsError> {
    let geometry = ArrayGeometry::default();
    (0..geometry.n_pairs())
        .map(|p| expected_lag(&geometry, p, doa_deg).map_err(js_err))
        .collect()
}

/// Builds a tail class at `target_deg` from one frame of the class at
/// `donor_deg`. Returns `[donor | augmented | real target]`, each 306 values.
#[wasm_bindgen]
pub fn augment_preview(donor_deg: f64, target_deg: f64, noise_scale: f64, seed_value: u32) -> Result<Vec<f64>, JsError> {
    let geometry = ArrayGeometry::default();
    let mut rng = seed::rng(u64::from(seed_value), &[]);
    let mut pool = Vec::new();
    for doa in [donor_deg, target_deg] {
        for _ in 0..8 {
            pool.push(sample(&geometry, doa, Some(20.0), &mut rng)?);
        }
    }
    let stats = peak_stats(&pool, geometry.n_pairs(), 2 * MAX_LAG + 1).map_err(js_err)?;
    let donor = &stats.classes[&pool[0].class()];
    let target = &stats.classes[&pool[8].class()];
    let made = augment_sample(&pool[0].feature, target, donor, noise_scale, &mut rng).map_err(js_err)?;
    let mut out = pool[0].feature.values().to_vec();
    out.extend_from_slice(made.values());
    out.extend_from_slice(pool[8].feature.values());
    Ok(out)
}

/// Per-rank counts `⌊n_max·e^{-λ(c-1)}⌋` followed by their Gini
/// coefficient and the resulting adaptive regularizer.
#[wasm_bindgen]
pub fn long_tail(lambda: f64, n_max: u32, n_classes: u32, gamma0: f64, reg_exponent: f64) -> Result<Vec<f64>, JsError> {
    let counts: Vec<f64> = class_counts(lambda, n_max as usize, n_classes as usize)
        .map_err(js_err)?
        .iter()
        .map(|c| c.count as f64)
        .collect();
    let g = gini(&counts).map_err(js_err)?;
    let mut out = counts;
    out.push(g);
    out.push(adaptive_gamma(g, gamma0, reg_exponent));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn peak(seg: &[f64]) -> usize {
        seg.iter()
            .enumerate()
            .fold((0, f64::MIN), |b, (i, &v)| if v > b.1 { (i, v) } else { b })
            .0
    }

    #[test]
    fn features_peak_at_expected_lags() {
        let f = gcc_features(40.0, f64::NAN, 1).unwrap();
        let lags = expected_lags(40.0).unwrap();
        assert_eq!(f.len(), 306);
        for (k, lag) in lags.iter().enumerate() {
            let got = peak(&f[k * 51..(k + 1) * 51]) as f64 - 25.0;
            assert!((got - lag).abs() <= 1.0, "pair {k}: {got} vs {lag}");
        }
    }

    #[test]
    fn preview_moves_donor_peaks_to_target() {
        let v = augment_preview(0.0, 90.0, 0.0, 3).unwrap();
        assert_eq!(v.len(), 3 * 306);
        let (made, real) = (&v[306..612], &v[612..]);
        for k in 0..6 {
            let a = peak(&made[k * 51..(k + 1) * 51]) as i64;
            let b = peak(&real[k * 51..(k + 1) * 51]) as i64;
            assert!((a - b).abs() <= 1, "segment {k}");
        }
    }

    #[test]
    fn long_tail_tail_values() {
        let v = long_tail(0.05, 500, 2, 100.0, 2.0).unwrap();
        assert_eq!(&v[..2], &[500.0, 475.0]);
        assert!((v[2] - 25.0 / 1950.0).abs() < 1e-15);
        assert!((v[3] - 100.0 * (2.0 * (v[2] - 0.5)).exp()).abs() < 1e-12);
        assert!(class_counts(0.0, 500, 3).is_err());
    }
}
