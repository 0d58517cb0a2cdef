use std::collections::BTreeMap;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::metrics::{bwt, metrics, AccuracyMatrix};
use super::report::{EvalReport, TaskSummary};
use super::tasks::{build_tasks, TaskSequence};
use crate::adir::{gini, AdirOptions, AdirState, ClassifierWeights};
use crate::augment::augment_task;
use crate::backbone::{feature_matrix, target_matrix, train_head, train_task1, HeadParams, MlpParams};
use crate::config::{Baseline, Config, SnrLevel};
use crate::dataset::{render_tasks, render_tests, TaskData};
use crate::seed;
use crate::signal::LabeledSample;
use crate::{Error, Result};

/// The classifier in force after a given task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TaskClassifier {
    Ridge(ClassifierWeights),
    Head(HeadParams),
}

impl TaskClassifier {
    pub fn predict(&self, embeddings: &Array2<f64>) -> Result<Vec<usize>> {
        match self {
            TaskClassifier::Ridge(w) => w.predict_batch(embeddings.view()),
            TaskClassifier::Head(h) => {
                let logits = h.logits(embeddings.view())?;
                Ok(logits
                    .rows()
                    .into_iter()
                    .map(|r| crate::adir::argmax(r.as_slice().expect("row-major logits")))
                    .collect())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedSequence {
    pub mlp: MlpParams,
    /// One per task; entry `m` produced row `m` of the accuracy matrix.
    pub classifiers: Vec<TaskClassifier>,
    pub tasks: Vec<TaskSummary>,
    /// Final analytic state (absent for gradient-head baselines).
    pub adir: Option<AdirState>,
}

fn class_counts_of(samples: &[LabeledSample]) -> Vec<f64> {
    let mut m: BTreeMap<usize, f64> = BTreeMap::new();
    for s in samples {
        *m.entry(s.class()).or_default() += 1.0;
    }
    m.into_values().collect()
}

fn stage<T>(r: Result<T>, name: &'static str) -> Result<T> {
    r.map_err(|e| e.at_stage(name))
}

/// Trains the selected method over the whole sequence.
pub fn train_sequence(config: &Config, sequence: &TaskSequence, data: &[TaskData]) -> Result<TrainedSequence> {
    if data.len() != sequence.tasks.len() || data.is_empty() {
        return Err(Error::Dimension {
            context: "task data",
            expected: sequence.tasks.len(),
            actual: data.len(),
        });
    }
    let run = &config.run;
    let flags = run.flags;

    let train_sets: Vec<Vec<LabeledSample>> = data
        .iter()
        .enumerate()
        .map(|(i, d)| {
            if flags.gda {
                let s = seed::derive(run.seed, &[seed::STREAM_AUGMENT, i as u64 + 1]);
                Ok(augment_task(&d.train, run.augment_rate, run.augment_noise, s)?.samples)
            } else {
                Ok(d.train.clone())
            }
        })
        .collect::<Result<_>>()
        .map_err(|e: Error| e.at_stage("augment"))?;

    let mut summaries: Vec<TaskSummary> = sequence
        .tasks
        .iter()
        .zip(data)
        .zip(&train_sets)
        .map(|((task, d), aug)| {
            Ok(TaskSummary {
                task: task.index,
                lambda: task.lambda,
                classes: task.classes.len(),
                new_classes: task.new_classes().count(),
                clamped_classes: task.classes.iter().filter(|c| c.clamped).count(),
                train_samples: d.train.len(),
                augmented_samples: aug.len(),
                test_samples: d.test.len(),
                gini: gini(&class_counts_of(aug))?,
                gamma: None,
            })
        })
        .collect::<Result<_>>()?;

    let hidden = config.backbone.hidden_dims();
    let train_cfg = config.backbone.train_config(run.seed);
    let backbone_data: Vec<LabeledSample> = match run.baseline {
        Baseline::JointUpperBound => train_sets.concat(),
        _ => train_sets[0].clone(),
    };
    let outcome = stage(train_task1(&backbone_data, &hidden, &train_cfg), "backbone")?;
    let mlp = outcome.network.mlp.clone();
    let embed = |s: &[LabeledSample]| stage(mlp.embed(feature_matrix(s).view()), "embed");

    let options = AdirOptions {
        arm_reweight: flags.arm_reweight,
        adaptive_gamma: flags.adaptive_gamma,
    };
    let new_state = || {
        AdirState::new(
            mlp.output_dim(),
            config.adir.gamma0,
            config.adir.reg_exponent,
            options,
        )
    };
    let mut classifiers = Vec::with_capacity(train_sets.len());
    let mut final_state = None;

    match run.baseline {
        Baseline::Adir => {
            let mut state = new_state()?;
            for (set, summary) in train_sets.iter().zip(summaries.iter_mut()) {
                let h = embed(set)?;
                let classes: Vec<usize> = set.iter().map(LabeledSample::class).collect();
                stage(state.accumulate_batch(h.view(), &classes, target_matrix(set).view()), "adir")?;
                let w = stage(state.solve(summary.gini), "adir")?;
                summary.gamma = Some(w.gamma_used);
                classifiers.push(TaskClassifier::Ridge(w));
            }
            final_state = Some(state);
        }
        Baseline::JointUpperBound => {
            let pooled = train_sets.concat();
            let mut state = new_state()?;
            let h = embed(&pooled)?;
            let classes: Vec<usize> = pooled.iter().map(LabeledSample::class).collect();
            stage(state.accumulate_batch(h.view(), &classes, target_matrix(&pooled).view()), "adir")?;
            let w = stage(state.solve(gini(&class_counts_of(&pooled))?), "adir")?;
            for summary in summaries.iter_mut() {
                summary.gamma = Some(w.gamma_used);
            }
            classifiers = vec![TaskClassifier::Ridge(w); train_sets.len()];
            final_state = Some(state);
        }
        Baseline::LowerBoundStatic => {
            classifiers = vec![TaskClassifier::Head(outcome.network.head.clone()); train_sets.len()];
        }
        Baseline::LowerBoundFinetune => {
            // Task 1 keeps the end-to-end head; each later task fine-tunes it.
            let mut head = outcome.network.head.clone();
            classifiers.push(TaskClassifier::Head(head.clone()));
            for (t, set) in train_sets.iter().enumerate().skip(1) {
                let h = embed(set)?;
                let s = seed::derive(run.seed, &[seed::STREAM_HEAD, t as u64 + 1]);
                stage(train_head(&mut head, h.view(), target_matrix(set).view(), &train_cfg, s), "head")?;
                classifiers.push(TaskClassifier::Head(head.clone()));
            }
        }
    }

    Ok(TrainedSequence {
        mlp,
        classifiers,
        tasks: summaries,
        adir: final_state,
    })
}

/// Fills the accuracy and MAE matrices and the final metrics for one set
/// of test data (one `Vec` per task).
pub fn evaluate(
    config: &Config,
    trained: &TrainedSequence,
    tests: &[Vec<LabeledSample>],
    snr: SnrLevel,
) -> Result<EvalReport> {
    let t = trained.classifiers.len();
    if tests.len() != t {
        return Err(Error::Dimension {
            context: "test sets",
            expected: t,
            actual: tests.len(),
        });
    }
    let tol = config.benchmark.acc_tolerance_deg;
    let embeddings: Vec<Array2<f64>> = tests
        .iter()
        .map(|s| trained.mlp.embed(feature_matrix(s).view()))
        .collect::<Result<_>>()
        .map_err(|e| e.at_stage("evaluate"))?;
    let truths: Vec<Vec<f64>> = tests
        .iter()
        .map(|s| s.iter().map(|x| f64::from(x.doa_deg)).collect())
        .collect();

    let mut acc = Vec::with_capacity(t);
    let mut mae = Vec::with_capacity(t);
    let mut final_preds = Vec::new();
    for (m, clf) in trained.classifiers.iter().enumerate() {
        let (mut acc_row, mut mae_row) = (Vec::with_capacity(m + 1), Vec::with_capacity(m + 1));
        for k in 0..=m {
            let preds: Vec<f64> = clf.predict(&embeddings[k])?.into_iter().map(|p| p as f64).collect();
            let (e, a) = metrics(&preds, &truths[k], tol).map_err(|e| e.at_stage("evaluate"))?;
            acc_row.push(a);
            mae_row.push(e);
            if m + 1 == t {
                final_preds.extend(preds);
            }
        }
        acc.push(acc_row);
        mae.push(mae_row);
    }
    let all_truths = truths.concat();
    let (final_mae, final_acc) = metrics(&final_preds, &all_truths, tol).map_err(|e| e.at_stage("evaluate"))?;
    let acc_matrix = AccuracyMatrix { rows: acc };
    let bwt = match config.run.baseline {
        Baseline::JointUpperBound => None,
        _ => Some(bwt(&acc_matrix)?),
    };
    Ok(EvalReport {
        baseline: config.run.baseline.tag().into(),
        flags: config.run.flags,
        seed: config.run.seed,
        snr: snr.to_string(),
        acc_matrix,
        mae_matrix: AccuracyMatrix { rows: mae },
        final_acc,
        final_mae,
        bwt,
        tasks: trained.tasks.clone(),
        config: config.clone(),
    })
}

/// Trains on the given (already rendered) data and evaluates on its
/// capture-noise test sets.
pub fn run_on_tasks(config: &Config, sequence: &TaskSequence, data: &[TaskData]) -> Result<(EvalReport, TrainedSequence)> {
    let trained = train_sequence(config, sequence, data)?;
    let tests: Vec<Vec<LabeledSample>> = data.iter().map(|d| d.test.clone()).collect();
    let report = evaluate(config, &trained, &tests, SnrLevel::Clean)?;
    Ok((report, trained))
}

/// Builds the sequence from `run.seed`, renders it and runs the pipeline.
pub fn run_experiment(config: &Config) -> Result<EvalReport> {
    config.validate()?;
    let sequence = stage(build_tasks(config, config.run.seed), "tasks")?;
    let data = render_tasks(config, &sequence)?;
    Ok(run_on_tasks(config, &sequence, &data)?.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub snr: SnrLevel,
    pub report: EvalReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    pub avg_acc: f64,
    pub avg_mae: f64,
}

/// Re-renders every test set at each level from the same specs and
/// evaluates the already trained sequence on it. `clean` reuses the
/// capture-noise test sets from `data`.
pub fn snr_sweep(
    config: &Config,
    sequence: &TaskSequence,
    data: &[TaskData],
    trained: &TrainedSequence,
    levels: &[SnrLevel],
) -> Result<SweepReport> {
    if levels.is_empty() {
        return Err(Error::InvalidArgument("empty SNR list".into()));
    }
    let rows = levels
        .iter()
        .map(|&level| {
            let tests = match level {
                SnrLevel::Clean => data.iter().map(|d| d.test.clone()).collect(),
                SnrLevel::Db(_) => render_tests(config, sequence, level)?,
            };
            Ok(SweepRow {
                snr: level,
                report: evaluate(config, trained, &tests, level)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let n = rows.len() as f64;
    Ok(SweepReport {
        avg_acc: rows.iter().map(|r| r.report.final_acc).sum::<f64>() / n,
        avg_mae: rows.iter().map(|r| r.report.final_mae).sum::<f64>() / n,
        rows,
    })
}
