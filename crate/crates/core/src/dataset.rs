//! Rendered task data and its on-disk form.
//!
//! A dataset directory holds `task_XX.txt` (train) and `test/task_XX.txt`
//! per task plus `metadata.json`. Each text file starts with the header
//! `ssl-gcil-v1 <pairs> <lags>` followed by one line per sample: the DoA
//! bin, then every feature value with 9 significant digits.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::{Config, SnrLevel};
use crate::harness::{render_all, TaskSequence};
use crate::signal::{GccFeature, LabeledSample};
use crate::{Error, Result};

pub const FORMAT_TAG: &str = "ssl-gcil-v1";
pub const METADATA_FILE: &str = "metadata.json";

#[derive(Debug, Clone, PartialEq)]
pub struct TaskData {
    pub train: Vec<LabeledSample>,
    pub test: Vec<LabeledSample>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub format: String,
    pub seed: u64,
    pub n_pairs: usize,
    pub n_lags: usize,
    pub config: Config,
    pub sequence: TaskSequence,
}

/// Noise level applied when rendering: `clean` means the configured
/// capture noise, anything else replaces it.
pub fn snr_db(config: &Config, level: SnrLevel) -> Option<f64> {
    match level {
        SnrLevel::Clean => config.benchmark.capture_snr_db,
        SnrLevel::Db(v) => Some(v),
    }
}

pub fn render_tasks(config: &Config, sequence: &TaskSequence) -> Result<Vec<TaskData>> {
    let snr = snr_db(config, SnrLevel::Clean);
    sequence
        .tasks
        .iter()
        .map(|t| {
            Ok(TaskData {
                train: render_all(&t.train, &config.geometry, snr)?,
                test: render_all(&t.test, &config.geometry, snr)?,
            })
        })
        .collect::<Result<_>>()
        .map_err(|e: Error| e.at_stage("render"))
}

/// Test sets only, re-rendered from the same specs at another noise level.
pub fn render_tests(config: &Config, sequence: &TaskSequence, level: SnrLevel) -> Result<Vec<Vec<LabeledSample>>> {
    let snr = snr_db(config, level);
    sequence
        .tasks
        .iter()
        .map(|t| render_all(&t.test, &config.geometry, snr))
        .collect::<Result<_>>()
        .map_err(|e: Error| e.at_stage("render"))
}

fn task_file(dir: &Path, index: usize) -> PathBuf {
    dir.join(format!("task_{index:02}.txt"))
}

pub fn train_path(dir: &Path, index: usize) -> PathBuf {
    task_file(dir, index)
}

pub fn test_path(dir: &Path, index: usize) -> PathBuf {
    task_file(&dir.join("test"), index)
}

pub fn encode_samples(samples: &[LabeledSample], n_pairs: usize, n_lags: usize) -> Result<String> {
    let mut out = format!("{FORMAT_TAG} {n_pairs} {n_lags}\n");
    for s in samples {
        let f = &s.feature;
        if f.n_segments() != n_pairs || f.segment_len() != n_lags {
            return Err(Error::Dimension {
                context: "dataset record",
                expected: n_pairs * n_lags,
                actual: f.len(),
            });
        }
        write!(out, "{}", s.doa_deg).expect("write to string");
        for v in f.values() {
            write!(out, " {v:.8e}").expect("write to string");
        }
        out.push('\n');
    }
    Ok(out)
}

pub fn decode_samples(text: &str) -> Result<Vec<LabeledSample>> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::Parse("empty dataset file".into()))?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    let (p, d) = match fields.as_slice() {
        [tag, p, d] if *tag == FORMAT_TAG => (
            p.parse::<usize>().map_err(|_| Error::Parse(format!("bad pair count `{p}`")))?,
            d.parse::<usize>().map_err(|_| Error::Parse(format!("bad lag count `{d}`")))?,
        ),
        _ => return Err(Error::Parse(format!("unrecognized header `{header}`"))),
    };
    let mut out = Vec::new();
    for (n, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let mut it = line.split_whitespace();
        let doa = it
            .next()
            .and_then(|t| t.parse::<u16>().ok())
            .ok_or_else(|| Error::Parse(format!("record {}: bad DoA", n + 1)))?;
        let values = it
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Parse(format!("record {}: {e}", n + 1)))?;
        if values.len() != p * d {
            return Err(Error::Parse(format!(
                "record {}: {} values, expected {}",
                n + 1,
                values.len(),
                p * d
            )));
        }
        out.push(LabeledSample::new(GccFeature::new(values, d)?, doa)?);
    }
    Ok(out)
}

pub fn write_dataset(dir: &Path, metadata: &Metadata, data: &[TaskData]) -> Result<()> {
    fs::create_dir_all(dir.join("test"))?;
    for (i, task) in data.iter().enumerate() {
        fs::write(train_path(dir, i + 1), encode_samples(&task.train, metadata.n_pairs, metadata.n_lags)?)?;
        fs::write(test_path(dir, i + 1), encode_samples(&task.test, metadata.n_pairs, metadata.n_lags)?)?;
    }
    let mut json = serde_json::to_string_pretty(metadata)?;
    json.push('\n');
    fs::write(dir.join(METADATA_FILE), json)?;
    Ok(())
}

pub fn read_metadata(dir: &Path) -> Result<Metadata> {
    let meta: Metadata = serde_json::from_str(&fs::read_to_string(dir.join(METADATA_FILE))?)?;
    if meta.format != FORMAT_TAG {
        return Err(Error::Parse(format!("unsupported dataset format `{}`", meta.format)));
    }
    Ok(meta)
}

pub fn read_dataset(dir: &Path) -> Result<(Metadata, Vec<TaskData>)> {
    let meta = read_metadata(dir)?;
    let data = (1..=meta.sequence.tasks.len())
        .map(|t| {
            Ok(TaskData {
                train: decode_samples(&fs::read_to_string(train_path(dir, t))?)?,
                test: decode_samples(&fs::read_to_string(test_path(dir, t))?)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((meta, data))
}

impl Metadata {
    pub fn new(config: &Config, sequence: TaskSequence) -> Self {
        Self {
            format: FORMAT_TAG.into(),
            seed: sequence.seed,
            n_pairs: config.geometry.mic_positions.len() * (config.geometry.mic_positions.len() - 1) / 2,
            n_lags: config.geometry.segment_len(),
            config: config.clone(),
            sequence,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(doa: u16, values: Vec<f64>) -> LabeledSample {
        LabeledSample::new(GccFeature::new(values, 3).unwrap(), doa).unwrap()
    }

    #[test]
    fn record_round_trip_keeps_nine_digits() {
        let s = vec![
            sample(7, vec![0.123456789123, -1.0, 1e-12, 0.5, 0.25, -0.333333333333]),
            sample(359, vec![1.0; 6]),
        ];
        let text = encode_samples(&s, 2, 3).unwrap();
        assert!(text.starts_with("ssl-gcil-v1 2 3\n7 1.23456789e-1 "));
        let back = decode_samples(&text).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[1], s[1]);
        for (a, b) in back[0].feature.values().iter().zip(s[0].feature.values()) {
            assert!((a - b).abs() <= 1e-9 * b.abs().max(1e-300));
        }
    }

    #[test]
    fn malformed_records_rejected() {
        assert!(decode_samples("").is_err());
        assert!(decode_samples("other 2 3\n").is_err());
        assert!(decode_samples("ssl-gcil-v1 1 2\n5 0.1\n").is_err());
        assert!(decode_samples("ssl-gcil-v1 1 2\n999 0.1 0.2\n").is_err());
        assert_eq!(decode_samples("ssl-gcil-v1 1 2\n").unwrap(), vec![]);
    }
}
