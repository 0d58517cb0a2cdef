//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any
//! fails. Runs the desk-scale experiments, so expect a few minutes.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use nalgebra::DMatrix;
use ndarray::{Array1, Array2, ArrayD};
use rand::Rng as _;
use rand_distr::StandardNormal;

use ssl_gcil::adir::{adaptive_gamma, gini, AdirOptions, AdirState};
use ssl_gcil::augment::{augment_task, peak_stats};
use ssl_gcil::backbone::Network;
use ssl_gcil::config::{Baseline, Config, MethodFlags};
use ssl_gcil::dataset::{render_tasks, TaskData};
use ssl_gcil::harness::{angular_distance, build_tasks, bwt, run_on_tasks, snr_sweep, train_sequence, AccuracyMatrix};
use ssl_gcil::seed;
use ssl_gcil::signal::{
    delay_signal, extract_features, gaussian_label, gcc_phat, synth_frame, ArrayGeometry, LabeledSample,
    MultichannelFrame,
};
use ssl_gcil::N_BINS;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn rel_frobenius(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    num / den.max(f64::MIN_POSITIVE)
}

struct Ridge {
    h: Array2<f64>,
    classes: Vec<usize>,
}

impl Ridge {
    fn random(seed_value: u64, n: usize, dim: usize, n_classes: usize) -> Self {
        let mut r = seed::rng(seed_value, &[]);
        let bins: Vec<usize> = (0..n_classes).map(|_| r.random_range(0..N_BINS)).collect();
        let h = Array2::from_shape_simple_fn((n, dim), || r.sample::<f64, _>(StandardNormal));
        // Every class gets at least one sample; the rest are skewed toward low indices.
        let classes = (0..n)
            .map(|i| {
                if i < n_classes {
                    bins[i]
                } else {
                    let u: f64 = r.random();
                    bins[((u * u) * n_classes as f64) as usize]
                }
            })
            .collect();
        Self { h, classes }
    }

    fn targets(&self) -> Array2<f64> {
        let mut z = Array2::zeros((self.classes.len(), N_BINS));
        for (i, &c) in self.classes.iter().enumerate() {
            z.row_mut(i).assign(&Array1::from(gaussian_label(c as i64).unwrap()));
        }
        z
    }

    fn counts(&self) -> BTreeMap<usize, f64> {
        let mut m = BTreeMap::new();
        for &c in &self.classes {
            *m.entry(c).or_insert(0.0) += 1.0;
        }
        m
    }

    /// Explicit weighted normal equations solved by LU.
    fn dense_oracle(&self, gamma: f64, reweight: bool) -> Array2<f64> {
        let (n, d) = self.h.dim();
        let counts = self.counts();
        let z = self.targets();
        let mut a = DMatrix::<f64>::identity(d, d) * gamma;
        let mut c = DMatrix::<f64>::zeros(d, N_BINS);
        for i in 0..n {
            let w = if reweight { 1.0 / counts[&self.classes[i]] } else { 1.0 };
            let hi = DMatrix::from_row_slice(d, 1, self.h.row(i).as_slice().unwrap());
            let zi = DMatrix::from_row_slice(1, N_BINS, z.row(i).as_slice().unwrap());
            a += &hi * hi.transpose() * w;
            c += &hi * zi * w;
        }
        let w = a.lu().solve(&c).expect("oracle system is nonsingular");
        Array2::from_shape_fn((d, N_BINS), |(i, j)| w[(i, j)])
    }

    fn state(&self, order: &[usize], options: AdirOptions) -> AdirState {
        let mut s = AdirState::new(self.h.ncols(), 100.0, 2.0, options).unwrap();
        let z = self.targets();
        for &i in order {
            s.accumulate(self.h.row(i), self.classes[i], z.row(i)).unwrap();
        }
        s
    }
}

fn c1_solver_oracle() -> Verdict {
    let mut worst: f64 = 0.0;
    for inst in 0..5u64 {
        let data = Ridge::random(100 + inst, 200, 32, 12);
        let order: Vec<usize> = (0..200).collect();
        let state = data.state(&order, AdirOptions::default());
        let counts: Vec<f64> = data.counts().into_values().collect();
        let g = gini(&counts).unwrap();
        let w = state.solve(g).unwrap();
        let gamma = 100.0 * (2.0 * (g - 0.5)).exp();
        worst = worst.max(rel_frobenius(&w.weights, &data.dense_oracle(gamma, true)));
    }
    verdict(worst <= 1e-8, format!("max rel Frobenius error {worst:.2e} (limit 1e-8)"))
}

fn c2_sequential_batch() -> Verdict {
    let data = Ridge::random(7, 300, 32, 12);
    let pooled = data.dense_oracle(25.0, true);
    let mut worst: f64 = 0.0;
    let mut r = seed::rng(8, &[]);
    for _ in 0..3 {
        let mut order: Vec<usize> = (0..300).collect();
        rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut r);
        let w = data.state(&order, AdirOptions::default()).solve_with_gamma(25.0).unwrap();
        worst = worst.max(rel_frobenius(&w.weights, &pooled));
    }
    verdict(worst <= 1e-6, format!("max rel difference over 3 orders {worst:.2e} (limit 1e-6)"))
}

fn c3_duplication() -> Verdict {
    let data = Ridge::random(9, 200, 32, 12);
    let order: Vec<usize> = (0..200).collect();
    let base = data.state(&order, AdirOptions::default()).solve_with_gamma(10.0).unwrap();
    let target = data.classes[0];
    let mut dup_order = Vec::new();
    for &i in &order {
        let k = if data.classes[i] == target { 5 } else { 1 };
        dup_order.extend(std::iter::repeat_n(i, k));
    }
    let dup = data.state(&dup_order, AdirOptions::default()).solve_with_gamma(10.0).unwrap();
    let err = rel_frobenius(&dup.weights, &base.weights);
    verdict(err <= 1e-10, format!("class ×5 changes W by {err:.2e} (limit 1e-10)"))
}

fn c4_gini_gamma() -> Verdict {
    let g31 = gini(&[3.0, 1.0]).unwrap();
    let uniform = gini(&[7.0; 9]).unwrap();
    let g_half = adaptive_gamma(0.5, 100.0, 2.0);
    let g_one = adaptive_gamma(1.0, 100.0, 2.0);
    let e_ok = ((g_one - 100.0 * std::f64::consts::E) / g_one).abs() < 1e-12;
    let mut r = seed::rng(4, &[]);
    let monotone = (0..100).all(|_| {
        let (a, b): (f64, f64) = (r.random(), r.random());
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        lo == hi || adaptive_gamma(lo, 100.0, 2.0) < adaptive_gamma(hi, 100.0, 2.0)
    });
    let pass = g31 == 0.25 && uniform == 0.0 && g_half == 100.0 && e_ok && monotone;
    verdict(
        pass,
        format!("gini([3,1])={g31}, gini(uniform)={uniform}, γ(0.5)={g_half}, γ(1)={g_one:.6}, monotone={monotone}"),
    )
}

fn c5_metrics() -> Verdict {
    let mut mismatches = 0;
    for a in 0..360i32 {
        for b in 0..360i32 {
            let d = (a - b).abs();
            if angular_distance(f64::from(a), f64::from(b)) != f64::from(d.min(360 - d)) {
                mismatches += 1;
            }
        }
    }
    let m = |rows: Vec<Vec<f64>>| bwt(&AccuracyMatrix { rows }).unwrap();
    let cases = [
        (m(vec![vec![0.9], vec![0.8, 0.7]]), -0.1),
        (m(vec![vec![0.6], vec![0.6, 0.5], vec![0.6, 0.5, 0.4]]), 0.0),
        (m(vec![vec![0.9], vec![0.7, 0.6], vec![0.8, 0.65, 0.7]]), -0.025),
    ];
    let worst = cases.iter().map(|(g, w)| (g - w).abs()).fold(0.0, f64::max);
    verdict(
        mismatches == 0 && worst < 1e-15,
        format!("{mismatches} distance mismatches over 360² pairs; BWT max error {worst:.1e}"),
    )
}

fn c6_gcc_phat() -> Verdict {
    let n = 4096;
    let max_lag = 25;
    let (mut hits, mut oracle_agree) = (0, 0);
    for trial in 0..200u64 {
        let mut r = seed::rng(600 + trial, &[]);
        let delay: f64 = r.random_range(-20.0..=20.0);
        let snr_db: f64 = r.random_range(20.0..40.0);
        let x: Vec<f64> = (0..n).map(|_| r.sample(StandardNormal)).collect();
        let y = delay_signal(&x, delay);
        let power = |s: &[f64]| s.iter().map(|v| v * v).sum::<f64>() / s.len() as f64;
        let add = |s: &[f64], r: &mut seed::Rng| -> Vec<f64> {
            let std = (power(s) / 10f64.powf(snr_db / 10.0)).sqrt();
            s.iter().map(|v| v + std * r.sample::<f64, _>(StandardNormal)).collect()
        };
        let (xn, yn) = (add(&x, &mut r), add(&y, &mut r));
        let mut samples = Array2::zeros((2, n));
        samples.row_mut(0).assign(&Array1::from(xn.clone()));
        samples.row_mut(1).assign(&Array1::from(yn.clone()));
        let frame = MultichannelFrame::new(samples, 48_000.0).unwrap();
        let cc = gcc_phat(&frame, 0, 1, max_lag).unwrap();
        let lag = argmax(&cc) as i64 - max_lag as i64;
        // Time-domain circular cross-correlation over the same lag window.
        let td: Vec<f64> = (-(max_lag as i64)..=max_lag as i64)
            .map(|l| (0..n).map(|t| xn[t] * yn[(t as i64 + l).rem_euclid(n as i64) as usize]).sum())
            .collect();
        let td_lag = argmax(&td) as i64 - max_lag as i64;
        hits += usize::from(lag == delay.round() as i64);
        oracle_agree += usize::from(lag == td_lag);
    }
    let rate = hits as f64 / 200.0;
    verdict(
        rate >= 0.98,
        format!(
            "argmax = round(delay) in {:.1}% of 200 frames (≥98% required); agrees with time-domain oracle in {:.1}%",
            100.0 * rate,
            100.0 * oracle_agree as f64 / 200.0
        ),
    )
}

fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &x)| if x > bv { (i, x) } else { (bi, bv) })
        .0
}

fn c7_gradients() -> Verdict {
    let mut r = seed::rng(77, &[]);
    let mut net = Network::init(12, &[16, 16, 16], 8, 0.0, &mut r).unwrap();
    let x = Array2::from_shape_simple_fn((4, 12), || r.sample::<f64, _>(StandardNormal));
    let z = Array2::from_shape_simple_fn((4, 8), || r.random::<f64>());
    let loss = |net: &Network| {
        net.loss_and_gradients(x.view(), z.view(), &mut seed::rng(0, &[]))
            .unwrap()
            .0
    };
    let (_, grads, _) = net.loss_and_gradients(x.view(), z.view(), &mut seed::rng(0, &[])).unwrap();
    let analytic: Vec<ArrayD<f64>> = grads.tensors().into_iter().map(|t| t.to_owned()).collect();
    let eps = 1e-5;
    let (mut worst, mut checked) = (0.0f64, 0usize);
    for (ti, g) in analytic.iter().enumerate() {
        for flat in 0..g.len() {
            let nudge = |net: &mut Network, delta: f64| {
                let mut tensors = net.trainable_mut().unwrap();
                let t = &mut tensors[ti];
                let idx = t.shape().to_vec();
                let mut rem = flat;
                let mut pos = vec![0; idx.len()];
                for d in (0..idx.len()).rev() {
                    pos[d] = rem % idx[d];
                    rem /= idx[d];
                }
                t[pos.as_slice()] += delta;
            };
            nudge(&mut net, eps);
            let up = loss(&net);
            nudge(&mut net, -2.0 * eps);
            let down = loss(&net);
            nudge(&mut net, eps);
            let numeric = (up - down) / (2.0 * eps);
            let a = g.as_slice().unwrap()[flat];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
            worst = worst.max(rel);
            checked += 1;
        }
    }
    verdict(
        worst <= 1e-4,
        format!("{checked} parameters, max relative error {worst:.2e} (limit 1e-4)"),
    )
}

fn c8_gda() -> Verdict {
    let geometry = ArrayGeometry::default();
    let counts: Vec<usize> = (0..20)
        .map(|c| (500.0 * (10.0f64 / 500.0).powf(c as f64 / 19.0)).round() as usize)
        .collect();
    let mut task = Vec::new();
    let mut r = seed::rng(88, &[]);
    for (c, &n) in counts.iter().enumerate() {
        let doa = (c * 18) as u16;
        for _ in 0..n {
            let frame = synth_frame(&geometry, f64::from(doa), Some(20.0), 2048, &mut r).unwrap();
            let f = extract_features(&frame, &geometry, 25).unwrap();
            task.push(LabeledSample::new(f, doa).unwrap());
        }
    }
    let stats = peak_stats(&task, 6, 51).unwrap();
    let out = augment_task(&task, 0.5, 0.05, 8).unwrap();
    let mut post: BTreeMap<usize, usize> = BTreeMap::new();
    for s in &out.samples {
        *post.entry(s.class()).or_default() += 1;
    }
    let need = (0.5 * 500.0f64).ceil() as usize;
    let min_count = *post.values().min().unwrap();
    let synthetic = &out.samples[task.len()..];
    let kept = synthetic
        .iter()
        .filter(|s| {
            let target = &stats.classes[&s.class()];
            (0..6).all(|k| (argmax(s.feature.segment(k)) as f64 - target.mean_pos[k]).abs() <= 1.0)
        })
        .count();
    let rate = kept as f64 / synthetic.len().max(1) as f64;
    verdict(
        min_count >= need && rate >= 0.95,
        format!(
            "counts {}..{} → min {min_count} (≥{need}); {} synthetic, {:.1}% with every segment peak within ±1 bin",
            counts[0],
            counts[19],
            synthetic.len(),
            100.0 * rate
        ),
    )
}

struct SeedRuns {
    cells: BTreeMap<&'static str, (f64, Option<f64>)>,
    sweep_all: Vec<f64>,
    sweep_acil: Vec<f64>,
}

fn cell(config: &Config, baseline: Baseline, flags: MethodFlags) -> Config {
    let mut c = config.clone();
    c.run.baseline = baseline;
    c.run.flags = flags;
    c
}

fn desk_seed(seed_value: u64) -> SeedRuns {
    let mut config = Config::desk();
    config.run.seed = seed_value;
    let seq = build_tasks(&config, seed_value).unwrap();
    let data: Vec<TaskData> = render_tasks(&config, &seq).unwrap();
    let only = |gda, adir| MethodFlags {
        gda,
        arm_reweight: adir,
        adaptive_gamma: adir,
    };
    let grid = [
        ("xx", Baseline::LowerBoundFinetune, only(false, false)),
        ("gda", Baseline::LowerBoundFinetune, only(true, false)),
        ("adir", Baseline::Adir, only(false, true)),
        ("all", Baseline::Adir, only(true, true)),
        ("joint", Baseline::JointUpperBound, only(true, true)),
    ];
    let mut cells = BTreeMap::new();
    for (name, baseline, flags) in grid {
        let (r, _) = run_on_tasks(&cell(&config, baseline, flags), &seq, &data).unwrap();
        cells.insert(name, (r.final_acc, r.bwt));
    }
    let levels = config.run.snr_list.clone();
    let sweep = |flags| {
        let c = cell(&config, Baseline::Adir, flags);
        let trained = train_sequence(&c, &seq, &data).unwrap();
        snr_sweep(&c, &seq, &data, &trained, &levels)
            .unwrap()
            .rows
            .iter()
            .map(|r| r.report.final_acc)
            .collect::<Vec<_>>()
    };
    SeedRuns {
        cells,
        sweep_all: sweep(only(true, true)),
        sweep_acil: sweep(MethodFlags::NONE),
    }
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n as f64
}

fn c9_directional(runs: &[SeedRuns], elapsed_s: f64) -> Verdict {
    let acc = |k: &str| mean(runs.iter().map(|r| r.cells[k].0)) * 100.0;
    let bwt = |k: &str| mean(runs.iter().map(|r| r.cells[k].1.unwrap())) * 100.0;
    let a = bwt("xx") < -2.0;
    let b = bwt("adir") > bwt("gda");
    let best_other = acc("xx").max(acc("gda")).max(acc("adir"));
    let c = acc("all") > best_other && bwt("all") >= 0.0;
    let d = acc("joint") >= acc("all");
    let fast = elapsed_s < 15.0 * 60.0;
    verdict(
        a && b && c && d && fast,
        format!(
            "(a) ✗✗ BWT {:.2} {} | (b) ✗✓ BWT {:.2} vs ✓✗ {:.2} {} | (c) ✓✓ ACC {:.2} vs next {:.2}, BWT {:.2} {} | (d) joint ACC {:.2} {} | {:.0} s",
            bwt("xx"),
            mark(a),
            bwt("adir"),
            bwt("gda"),
            mark(b),
            acc("all"),
            best_other,
            bwt("all"),
            mark(c),
            acc("joint"),
            mark(d),
            elapsed_s
        ),
    )
}

fn mark(ok: bool) -> &'static str {
    if ok {
        "ok"
    } else {
        "FAIL"
    }
}

fn c10_sweep(runs: &[SeedRuns]) -> Verdict {
    let rows = runs[0].sweep_all.len();
    let all: Vec<f64> = (0..rows).map(|i| 100.0 * mean(runs.iter().map(|r| r.sweep_all[i]))).collect();
    let acil: Vec<f64> = (0..rows).map(|i| 100.0 * mean(runs.iter().map(|r| r.sweep_acil[i]))).collect();
    let monotone = all.windows(2).all(|w| w[1] <= w[0] + 1.0);
    let wins = all.iter().zip(&acil).filter(|(a, b)| a >= b).count();
    let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.2}")).collect::<Vec<_>>().join("/");
    verdict(
        monotone && wins >= 4,
        format!(
            "✓✓ ACC clean/20/10/0/-10 = {} (non-increasing ±1: {}); ACIL-like = {}; ✓✓ ≥ ACIL-like in {wins}/5 rows (≥4 required)",
            fmt(&all),
            mark(monotone),
            fmt(&acil)
        ),
    )
}

fn c11_determinism() -> Verdict {
    let bin = env!("CARGO_BIN_EXE_ssl-gcil");
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let status = Command::new(bin)
            .args(["run", "--config", "desk", "--seed", "3", "--out"])
            .arg(dir.path().join(name))
            .stdout(std::process::Stdio::null())
            .status()
            .unwrap();
        status.success()
    };
    if !(run("a") && run("b")) {
        return verdict(false, "cmd run exited non-zero");
    }
    let files = ["report.json", "acc_matrix.csv", "summary.csv"];
    let read = |run: &str, f: &str| std::fs::read(Path::new(&dir.path().join(run)).join(f)).unwrap();
    let same: Vec<&str> = files.iter().copied().filter(|f| read("a", f) == read("b", f)).collect();
    verdict(
        same.len() == files.len(),
        format!("byte-identical: {} of {}", same.join(", "), files.len()),
    )
}

fn timed(limit_s: Option<f64>, f: impl FnOnce() -> Verdict) -> Verdict {
    let t = Instant::now();
    let mut v = f();
    let s = t.elapsed().as_secs_f64();
    if let Some(limit) = limit_s {
        if s >= limit {
            v.pass = false;
        }
        v.detail = format!("{} [{s:.2} s, limit {limit} s]", v.detail);
    } else {
        v.detail = format!("{} [{s:.2} s]", v.detail);
    }
    v
}

fn main() {
    let names = [
        "solver-oracle equivalence",
        "sequential equals batch",
        "duplication invariance",
        "gini / gamma correctness",
        "metric oracles",
        "GCC-PHAT correctness",
        "backbone gradient check",
        "GDA contract",
        "desk directional ablation (3 seeds)",
        "SNR sweep monotonicity (3 seeds)",
        "determinism of cmd run",
    ];
    let mut results: Vec<Verdict> = vec![
        timed(Some(5.0), c1_solver_oracle),
        timed(Some(10.0), c2_sequential_batch),
        timed(None, c3_duplication),
        timed(None, c4_gini_gamma),
        timed(Some(2.0), c5_metrics),
        timed(Some(30.0), c6_gcc_phat),
        timed(None, c7_gradients),
        timed(None, c8_gda),
    ];
    let t = Instant::now();
    let runs: Vec<SeedRuns> = (0..3).map(desk_seed).collect();
    results.push(c9_directional(&runs, t.elapsed().as_secs_f64()));
    results.push(c10_sweep(&runs));
    results.push(timed(None, c11_determinism));

    let mut failed = 0;
    for (i, (name, v)) in names.iter().zip(&results).enumerate() {
        println!("[{}] {:>2}. {name}: {}", if v.pass { "PASS" } else { "FAIL" }, i + 1, v.detail);
        failed += usize::from(!v.pass);
    }
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
