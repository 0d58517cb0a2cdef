use ssl_gcil::checkpoint::Checkpoint;
use ssl_gcil::config::{Baseline, Config, MethodFlags, SnrLevel};
use ssl_gcil::dataset::{read_dataset, render_tasks, write_dataset, Metadata, TaskData};
use ssl_gcil::harness::{build_tasks, run_experiment, run_on_tasks, snr_sweep, train_sequence, TaskSequence};
use ssl_gcil::Error;

fn tiny() -> Config {
    let mut c = Config::desk();
    c.geometry.frame_length = 1024;
    c.benchmark.tasks = 3;
    c.benchmark.classes_per_task = 6;
    c.benchmark.new_per_task = 3;
    c.benchmark.n_max = 12;
    c.backbone.hidden = 16;
    c.backbone.epochs = 3;
    c.backbone.batch_size = 16;
    c.run.seed = 5;
    c.validate().unwrap();
    c
}

fn rendered(c: &Config) -> (TaskSequence, Vec<TaskData>) {
    let seq = build_tasks(c, c.run.seed).unwrap();
    let data = render_tasks(c, &seq).unwrap();
    (seq, data)
}

#[test]
fn every_baseline_fills_the_triangle() {
    let c = tiny();
    let (seq, data) = rendered(&c);
    for baseline in [
        Baseline::Adir,
        Baseline::LowerBoundFinetune,
        Baseline::LowerBoundStatic,
        Baseline::JointUpperBound,
    ] {
        let mut cfg = c.clone();
        cfg.run.baseline = baseline;
        let (r, trained) = run_on_tasks(&cfg, &seq, &data).unwrap();
        assert_eq!(r.acc_matrix.entry_count(), 6, "{baseline:?}");
        assert!(r.acc_matrix.rows.iter().flatten().all(|a| (0.0..=1.0).contains(a)));
        assert_eq!(r.baseline, baseline.tag());
        assert!(trained.mlp.is_frozen());
        match baseline {
            Baseline::JointUpperBound => assert_eq!(r.bwt, None),
            Baseline::LowerBoundStatic => assert_eq!(r.bwt, Some(0.0)),
            _ => assert!(r.bwt.is_some()),
        }
        let has_gamma = matches!(baseline, Baseline::Adir | Baseline::JointUpperBound);
        assert!(r.tasks.iter().all(|t| t.gamma.is_some() == has_gamma));
    }
}

#[test]
fn fixed_gamma_without_adaptive_flag() {
    let mut c = tiny();
    c.run.flags = MethodFlags::NONE;
    let (seq, data) = rendered(&c);
    let (r, _) = run_on_tasks(&c, &seq, &data).unwrap();
    assert!(r.tasks.iter().all(|t| t.gamma == Some(100.0)));
    assert!(r.tasks.iter().all(|t| t.augmented_samples == t.train_samples));
}

#[test]
fn augmentation_only_adds_samples() {
    let c = tiny();
    let (seq, data) = rendered(&c);
    let (r, _) = run_on_tasks(&c, &seq, &data).unwrap();
    for t in &r.tasks {
        assert!(t.augmented_samples >= t.train_samples);
    }
}

#[test]
fn reports_are_reproducible() {
    let c = tiny();
    let a = run_experiment(&c).unwrap().to_json();
    let b = run_experiment(&c).unwrap().to_json();
    assert_eq!(a, b);
    let mut other = c.clone();
    other.run.seed = 6;
    assert_ne!(a, run_experiment(&other).unwrap().to_json());
}

#[test]
fn clean_sweep_row_matches_run() {
    let c = tiny();
    let (seq, data) = rendered(&c);
    let (report, trained) = run_on_tasks(&c, &seq, &data).unwrap();
    let sweep = snr_sweep(&c, &seq, &data, &trained, &[SnrLevel::Clean, SnrLevel::Db(-10.0)]).unwrap();
    assert_eq!(sweep.rows[0].report, report);
    assert_eq!(sweep.rows[1].report.snr, "-10");
    assert!(snr_sweep(&c, &seq, &data, &trained, &[]).is_err());
}

#[test]
fn dataset_files_round_trip() {
    let c = tiny();
    let (seq, data) = rendered(&c);
    let dir = tempfile::tempdir().unwrap();
    write_dataset(dir.path(), &Metadata::new(&c, seq.clone()), &data).unwrap();
    let (meta, back) = read_dataset(dir.path()).unwrap();
    assert_eq!(meta.sequence, seq);
    assert_eq!(meta.n_pairs, 6);
    assert_eq!(meta.n_lags, 51);
    assert_eq!(back.len(), data.len());
    for (a, b) in back.iter().zip(&data) {
        assert_eq!(a.train.len(), b.train.len());
        assert_eq!(a.test.len(), b.test.len());
        for (x, y) in a.train.iter().zip(&b.train) {
            assert_eq!(x.doa_deg, y.doa_deg);
            for (u, v) in x.feature.values().iter().zip(y.feature.values()) {
                assert!((u - v).abs() <= 1e-8 * v.abs().max(1e-12));
            }
        }
    }
    let first = std::fs::read_to_string(dir.path().join("task_01.txt")).unwrap();
    assert!(first.starts_with("ssl-gcil-v1 6 51\n"));
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let c = tiny();
    let (seq, data) = rendered(&c);
    let trained = train_sequence(&c, &seq, &data).unwrap();
    let ck = Checkpoint::new(&c, trained.mlp.clone(), trained.adir.clone());
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ck.json");
    ck.save(&path).unwrap();
    let back = Checkpoint::load(&path).unwrap();
    assert_eq!(back, ck);
    assert_eq!(back.backbone.checksum(), trained.mlp.checksum());
    let bad = ck.to_json().replacen("\"version\":1", "\"version\":9", 1);
    assert!(Checkpoint::from_json(&bad).is_err());
}

#[test]
fn errors_name_their_stage() {
    let c = tiny();
    let (seq, data) = rendered(&c);
    let mut poisoned = data.clone();
    let nan = ssl_gcil::signal::GccFeature::new(vec![f64::NAN; 306], 51).unwrap();
    for s in &mut poisoned[0].train {
        s.feature = nan.clone();
    }
    let mut cfg = c.clone();
    cfg.run.flags.gda = false;
    let err = train_sequence(&cfg, &seq, &poisoned).unwrap_err();
    assert!(matches!(err, Error::Stage { stage: "backbone", .. }), "{err}");
    assert!(matches!(err.root(), Error::Divergence { .. }));
    assert!(train_sequence(&c, &seq, &data[..2]).is_err());
}
