//! GCC-PHAT peak-statistics augmentation for tail classes.
//!
//! For every class of a task we record where each pair's correlation peak
//! sits and how tall it is. Classes with fewer than `α · M_t` samples get
//! `⌈α M_t − N_c⌉` synthetic samples made by cyclically moving the peaks
//! of a donor sample (from the nearest abundant class) onto the tail
//! class's mean positions, rescaling to its mean amplitude and adding a
//! little Gaussian noise.

use std::collections::BTreeMap;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::adir::argmax;
use crate::seed;
use crate::signal::{circular_bin_distance, GccFeature, LabeledSample};
use crate::{Error, Result};

pub const DEFAULT_AUGMENT_RATE: f64 = 0.5;
/// Noise standard deviation relative to the donor segment's maximum.
pub const DEFAULT_NOISE_SCALE: f64 = 0.05;
/// Classes with fewer samples than this are flagged as having unreliable statistics.
pub const SMALL_CLASS: u64 = 3;

const SCALE_FLOOR: f64 = 1e-9;

/// Peak statistics of one class, one entry per segment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassPeaks {
    pub mean_pos: Vec<f64>,
    pub std_pos: Vec<f64>,
    pub mean_amp: Vec<f64>,
    pub std_amp: Vec<f64>,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeakStats {
    pub n_segments: usize,
    pub segment_len: usize,
    pub classes: BTreeMap<usize, ClassPeaks>,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Per class and segment: mean / std of the argmax bin and of the value at it.
pub fn peak_stats(task_data: &[LabeledSample], n_segments: usize, segment_len: usize) -> Result<PeakStats> {
    if task_data.is_empty() {
        return Err(Error::InvalidArgument("peak statistics of an empty task".into()));
    }
    let mut grouped: BTreeMap<usize, Vec<&LabeledSample>> = BTreeMap::new();
    for s in task_data {
        if s.feature.n_segments() != n_segments || s.feature.segment_len() != segment_len {
            return Err(Error::Dimension {
                context: "feature layout",
                expected: n_segments * segment_len,
                actual: s.feature.len(),
            });
        }
        grouped.entry(s.class()).or_default().push(s);
    }
    let classes = grouped
        .into_iter()
        .map(|(class, samples)| {
            let mut peaks = ClassPeaks {
                mean_pos: Vec::with_capacity(n_segments),
                std_pos: Vec::with_capacity(n_segments),
                mean_amp: Vec::with_capacity(n_segments),
                std_amp: Vec::with_capacity(n_segments),
                count: samples.len() as u64,
            };
            for k in 0..n_segments {
                let (pos, amp): (Vec<f64>, Vec<f64>) = samples
                    .iter()
                    .map(|s| {
                        let seg = s.feature.segment(k);
                        let i = argmax(seg);
                        (i as f64, seg[i])
                    })
                    .unzip();
                let (mp, sp) = mean_std(&pos);
                let (ma, sa) = mean_std(&amp);
                peaks.mean_pos.push(mp);
                peaks.std_pos.push(sp);
                peaks.mean_amp.push(ma);
                peaks.std_amp.push(sa);
            }
            (class, peaks)
        })
        .collect();
    Ok(PeakStats {
        n_segments,
        segment_len,
        classes,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanEntry {
    pub class: usize,
    /// Number of samples to synthesize, `K_c`.
    pub deficit: usize,
    pub donor: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentPlan {
    pub alpha: f64,
    /// Largest class size in the task, `M_t`.
    pub max_count: u64,
    pub entries: Vec<PlanEntry>,
    /// Set when tail classes exist but no class meets the donor threshold.
    pub no_donor: bool,
    /// Tail classes whose statistics rest on fewer than three samples.
    pub small_classes: Vec<usize>,
}

impl AugmentPlan {
    pub fn total_new(&self) -> usize {
        self.entries.iter().map(|e| e.deficit).sum()
    }
}

/// Deficits `K_c = ⌈α M_t − N_c⌉` for classes below `α M_t`, each paired with
/// the circularly nearest class meeting the threshold (ties: smaller index).
pub fn plan(stats: &PeakStats, alpha: f64) -> Result<AugmentPlan> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::InvalidArgument(format!("augmentation rate {alpha} outside (0, 1]")));
    }
    let max_count = stats.classes.values().map(|c| c.count).max().unwrap_or(0);
    let threshold = alpha * max_count as f64;
    let donors: Vec<usize> = stats
        .classes
        .iter()
        .filter(|(_, c)| c.count as f64 >= threshold)
        .map(|(&k, _)| k)
        .collect();
    let mut entries = Vec::new();
    let mut small_classes = Vec::new();
    let mut no_donor = false;
    for (&class, peaks) in &stats.classes {
        let n = peaks.count as f64;
        if n >= threshold {
            continue;
        }
        let Some(&donor) = donors
            .iter()
            .min_by_key(|&&d| (circular_bin_distance(d, class), d))
        else {
            no_donor = true;
            continue;
        };
        if peaks.count < SMALL_CLASS {
            small_classes.push(class);
        }
        entries.push(PlanEntry {
            class,
            deficit: (threshold - n).ceil() as usize,
            donor,
        });
    }
    if no_donor {
        entries.clear();
        small_classes.clear();
    }
    Ok(AugmentPlan {
        alpha,
        max_count,
        entries,
        no_donor,
        small_classes,
    })
}

/// Moves each segment's peak from the donor mean to the target mean,
/// rescales it to the target amplitude and adds `N(0, noise_scale · max)`
/// noise. Output values are clamped to [-1, 1].
pub fn augment_sample(
    base: &GccFeature,
    target: &ClassPeaks,
    donor: &ClassPeaks,
    noise_scale: f64,
    rng: &mut impl rand::Rng,
) -> Result<GccFeature> {
    let p = base.n_segments();
    for stats in [target, donor] {
        if stats.mean_pos.len() != p || stats.mean_amp.len() != p {
            return Err(Error::Dimension {
                context: "peak statistics segments",
                expected: p,
                actual: stats.mean_pos.len(),
            });
        }
    }
    let d = base.segment_len();
    let mut out = base.clone();
    for k in 0..p {
        let src = base.segment(k);
        let shift = (target.mean_pos[k] - donor.mean_pos[k]).round() as i64;
        let seg = out.segment_mut(k);
        for (i, v) in seg.iter_mut().enumerate() {
            let from = (i as i64 - shift).rem_euclid(d as i64) as usize;
            *v = src[from];
        }
        let peak = seg.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if peak > SCALE_FLOOR {
            let s = target.mean_amp[k] / peak;
            seg.iter_mut().for_each(|v| *v *= s);
        }
        let base_max = src.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sigma = noise_scale * base_max;
        if sigma > 0.0 {
            let normal = Normal::new(0.0, sigma).expect("positive sigma");
            seg.iter_mut().for_each(|v| *v += normal.sample(rng));
        }
        seg.iter_mut().for_each(|v| *v = v.clamp(-1.0, 1.0));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Augmented {
    pub samples: Vec<LabeledSample>,
    pub plan: AugmentPlan,
}

/// Returns the original samples followed by synthetic ones, ordered by
/// class then draw index. Each class draws from its own derived stream.
pub fn augment_task(task_data: &[LabeledSample], alpha: f64, noise_scale: f64, seed: u64) -> Result<Augmented> {
    let first = task_data
        .first()
        .ok_or_else(|| Error::InvalidArgument("cannot augment an empty task".into()))?;
    let stats = peak_stats(task_data, first.feature.n_segments(), first.feature.segment_len())?;
    let plan = plan(&stats, alpha)?;
    let mut samples = task_data.to_vec();
    let mut by_class: BTreeMap<usize, Vec<&LabeledSample>> = BTreeMap::new();
    for s in task_data {
        by_class.entry(s.class()).or_default().push(s);
    }
    for entry in &plan.entries {
        let pool = &by_class[&entry.donor];
        let target = &stats.classes[&entry.class];
        let donor = &stats.classes[&entry.donor];
        let mut rng = seed::rng(seed, &[entry.class as u64]);
        for _ in 0..entry.deficit {
            let base = pool[rng.random_range(0..pool.len())];
            let feature = augment_sample(&base.feature, target, donor, noise_scale, &mut rng)?;
            samples.push(LabeledSample::new(feature, entry.class as u16)?);
        }
    }
    Ok(Augmented { samples, plan })
}
