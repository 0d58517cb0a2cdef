use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::config::{Config, GeometryConfig};
use crate::seed;
use crate::signal::{extract_features, synth_frame, ArrayGeometry, LabeledSample};
use crate::{Error, Result, N_BINS};

/// Caps intra-stage parallelism.
pub const THREADS_ENV: &str = "SSL_GCIL_THREADS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCount {
    pub count: usize,
    /// The exponential schedule produced 0 and the count was raised to 1.
    pub clamped: bool,
}

/// `⌊n_max · e^{-λ(c-1)}⌋` for ranks `c = 1..=n_classes`, clamped to at least 1.
pub fn class_counts(lambda: f64, n_max: usize, n_classes: usize) -> Result<Vec<ClassCount>> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidArgument(format!("decay rate must be positive, got {lambda}")));
    }
    Ok((0..n_classes)
        .map(|rank| {
            let raw = (n_max as f64 * (-lambda * rank as f64).exp()).floor() as usize;
            ClassCount {
                count: raw.max(1),
                clamped: raw == 0,
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleSpec {
    /// Unique across the whole sequence, train and test alike.
    pub id: u64,
    pub doa_deg: u16,
    /// Jittered azimuth the frame is rendered from.
    pub source_doa: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskClass {
    pub doa_deg: u16,
    pub new: bool,
    pub train_count: usize,
    pub test_count: usize,
    pub clamped: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Task {
    /// 1-based.
    pub index: usize,
    pub lambda: f64,
    /// Sorted by DoA; position is the long-tail rank.
    pub classes: Vec<TaskClass>,
    pub train: Vec<SampleSpec>,
    pub test: Vec<SampleSpec>,
}

impl Task {
    pub fn new_classes(&self) -> impl Iterator<Item = u16> + '_ {
        self.classes.iter().filter(|c| c.new).map(|c| c.doa_deg)
    }

    pub fn reappearing(&self) -> impl Iterator<Item = u16> + '_ {
        self.classes.iter().filter(|c| !c.new).map(|c| c.doa_deg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSequence {
    pub seed: u64,
    pub tasks: Vec<Task>,
}

impl TaskSequence {
    /// Every bin that enters the sequence as a new class, in order of arrival.
    pub fn universe(&self) -> Vec<u16> {
        self.tasks.iter().flat_map(Task::new_classes).collect()
    }
}

/// Draws the class sets and per-sample specs. Task 1 and task T bring
/// `classes_per_task` new bins; tasks in between bring `new_per_task` new
/// bins plus reappearing ones drawn uniformly from everything seen so far.
pub fn build_tasks(config: &Config, seed_value: u64) -> Result<TaskSequence> {
    let b = &config.benchmark;
    let universe = b.universe_size();
    if b.tasks < 2 {
        return Err(Error::config("benchmark.tasks", "need at least two tasks"));
    }
    if universe > N_BINS {
        return Err(Error::config(
            "benchmark",
            format!("sequence needs {universe} distinct DoA bins, only {N_BINS} exist"),
        ));
    }
    let mut rng = seed::rng(seed_value, &[seed::STREAM_CLASSES]);
    let mut pool: Vec<u16> = (0..N_BINS as u16).collect();
    pool.shuffle(&mut rng);
    pool.truncate(universe);
    let mut fresh = pool.into_iter();
    let mut seen: Vec<u16> = Vec::new();
    let mut next_id = 0u64;
    let mut tasks = Vec::with_capacity(b.tasks);

    for t in 1..=b.tasks {
        let n_new = if t == 1 || t == b.tasks {
            b.classes_per_task
        } else {
            b.new_per_task
        };
        let mut members: Vec<(u16, bool)> = fresh.by_ref().take(n_new).map(|d| (d, true)).collect();
        if members.len() != n_new {
            return Err(Error::config("benchmark", "class budget does not cover the task sequence"));
        }
        let n_old = b.classes_per_task - n_new;
        if n_old > seen.len() {
            return Err(Error::config(
                "benchmark.new_per_task",
                format!("task {t} needs {n_old} reappearing classes but only {} were seen", seen.len()),
            ));
        }
        let mut prior = seen.clone();
        prior.shuffle(&mut rng);
        members.extend(prior.into_iter().take(n_old).map(|d| (d, false)));
        seen.extend(members.iter().filter(|m| m.1).map(|m| m.0));
        members.sort_unstable_by_key(|m| m.0);

        let lambda = b.lambda_schedule.at(t);
        let counts = class_counts(lambda, b.n_max, members.len())?;
        let mut classes = Vec::with_capacity(members.len());
        let (mut train, mut test) = (Vec::new(), Vec::new());
        for (&(doa, new), cc) in members.iter().zip(&counts) {
            let n_test = b
                .min_test_per_class
                .max((b.test_fraction * cc.count as f64).round() as usize);
            for (n, out, stream) in [(cc.count, &mut train, seed::STREAM_TRAIN), (n_test, &mut test, seed::STREAM_TEST)] {
                for _ in 0..n {
                    out.push(spec(seed_value, stream, next_id, doa, b.doa_jitter_deg));
                    next_id += 1;
                }
            }
            classes.push(TaskClass {
                doa_deg: doa,
                new,
                train_count: cc.count,
                test_count: n_test,
                clamped: cc.clamped,
            });
        }
        tasks.push(Task {
            index: t,
            lambda,
            classes,
            train,
            test,
        });
    }
    if fresh.next().is_some() {
        return Err(Error::config("benchmark", "class budget not exhausted by the last task"));
    }
    Ok(TaskSequence { seed: seed_value, tasks })
}

fn spec(base: u64, stream: u64, id: u64, doa: u16, jitter: f64) -> SampleSpec {
    let s = seed::derive(base, &[stream, id]);
    let offset = if jitter > 0.0 {
        seed::rng(s, &[1]).random_range(-jitter..=jitter)
    } else {
        0.0
    };
    SampleSpec {
        id,
        doa_deg: doa,
        source_doa: f64::from(doa) + offset,
        seed: s,
    }
}

/// Renders one frame and its features. `snr_db` of `None` is noiseless.
pub fn render_sample(
    spec: &SampleSpec,
    geometry: &ArrayGeometry,
    config: &GeometryConfig,
    snr_db: Option<f64>,
) -> Result<LabeledSample> {
    let mut rng = seed::rng(spec.seed, &[0]);
    let frame = synth_frame(geometry, spec.source_doa, snr_db, config.frame_length, &mut rng)?;
    let feature = extract_features(&frame, geometry, config.max_lag)?;
    LabeledSample::new(feature, spec.doa_deg)
}

/// Worker count from `SSL_GCIL_THREADS`, else the available parallelism.
pub fn thread_count() -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, usize::from))
}

/// Renders specs in order, split across scoped worker threads. Output is
/// independent of the thread count since every sample owns its seed.
pub fn render_all(specs: &[SampleSpec], config: &GeometryConfig, snr_db: Option<f64>) -> Result<Vec<LabeledSample>> {
    let geometry = config.build()?;
    let threads = thread_count().min(specs.len()).max(1);
    if threads == 1 {
        return specs.iter().map(|s| render_sample(s, &geometry, config, snr_db)).collect();
    }
    let chunk = specs.len().div_ceil(threads);
    let parts: Vec<Result<Vec<LabeledSample>>> = std::thread::scope(|scope| {
        let handles: Vec<_> = specs
            .chunks(chunk)
            .map(|part| {
                let geometry = &geometry;
                scope.spawn(move || {
                    part.iter()
                        .map(|s| render_sample(s, geometry, config, snr_db))
                        .collect::<Result<Vec<_>>>()
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("render worker panicked")).collect()
    });
    let mut out = Vec::with_capacity(specs.len());
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}
