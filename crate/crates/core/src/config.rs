//! Run configuration: one JSON document with `geometry`, `benchmark`,
//! `backbone`, `adir` and `run` sections. Unknown keys are rejected;
//! missing keys take the defaults below.
//!
//! Memory note: the analytic classifier keeps an `h × h` and an `h × 360`
//! matrix per observed class, i.e. about `classes · (h² + 360 h) · 8` bytes.
//! At `h = 1000` with all 360 classes that is roughly 3.9 GB.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::backbone::TrainConfig;
use crate::signal::{self, ArrayGeometry};
use crate::{Error, Result, N_BINS};

pub const DESK_PRESET: &str = include_str!("../../../configs/desk.json");
pub const PAPER_PRESET: &str = include_str!("../../../configs/paper.json");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub geometry: GeometryConfig,
    pub benchmark: BenchmarkConfig,
    pub backbone: BackboneConfig,
    pub adir: AdirConfig,
    pub run: RunConfig,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            geometry: GeometryConfig::default(),
            benchmark: BenchmarkConfig::default(),
            backbone: BackboneConfig::default(),
            adir: AdirConfig::default(),
            run: RunConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeometryConfig {
    /// Mic coordinates in meters. Default: 4 mics on a 0.114 m square.
    pub mic_positions: Vec<[f64; 3]>,
    pub speed_of_sound: f64,
    pub sample_rate: f64,
    pub frame_length: usize,
    /// GCC-PHAT lags kept per pair are `-max_lag..=max_lag`.
    /// Positive lag: the second mic of the pair hears the source later.
    pub max_lag: usize,
}

impl Default for GeometryConfig {
    fn default() -> Self {
        let g = ArrayGeometry::default();
        Self {
            mic_positions: g.mic_positions().to_vec(),
            speed_of_sound: signal::DEFAULT_SPEED_OF_SOUND,
            sample_rate: signal::DEFAULT_SAMPLE_RATE,
            frame_length: signal::DEFAULT_FRAME_LENGTH,
            max_lag: signal::DEFAULT_MAX_LAG,
        }
    }
}

impl GeometryConfig {
    pub fn build(&self) -> Result<ArrayGeometry> {
        ArrayGeometry::new(self.mic_positions.clone(), self.speed_of_sound, self.sample_rate)
            .map_err(|e| Error::config("geometry", e.to_string()))
    }

    pub fn segment_len(&self) -> usize {
        2 * self.max_lag + 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LambdaSchedule {
    pub start: f64,
    pub step: f64,
}

impl LambdaSchedule {
    /// `λ_t = start + step · (t - 1)` for 1-based `t`.
    pub fn at(&self, task: usize) -> f64 {
        self.start + self.step * (task as f64 - 1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkConfig {
    pub tasks: usize,
    pub classes_per_task: usize,
    /// New classes in tasks `2..T-1`; the rest of each such task reappears.
    pub new_per_task: usize,
    pub lambda_schedule: LambdaSchedule,
    pub n_max: usize,
    /// Test samples per class as a fraction of its training count.
    pub test_fraction: f64,
    pub min_test_per_class: usize,
    /// Sensor noise baked into every generated frame; `null` for none.
    pub capture_snr_db: Option<f64>,
    /// Source azimuth is drawn uniformly within ± this many degrees of the class bin.
    pub doa_jitter_deg: f64,
    pub acc_tolerance_deg: f64,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            tasks: 10,
            classes_per_task: 60,
            new_per_task: 30,
            lambda_schedule: LambdaSchedule {
                start: 0.05,
                step: 0.05,
            },
            n_max: 500,
            test_fraction: 0.25,
            min_test_per_class: 2,
            capture_snr_db: Some(20.0),
            doa_jitter_deg: 0.45,
            acc_tolerance_deg: 5.0,
        }
    }
}

impl BenchmarkConfig {
    /// Number of distinct DoA bins the sequence uses: the first and last
    /// tasks bring `classes_per_task` new classes, the middle ones `new_per_task`.
    pub fn universe_size(&self) -> usize {
        2 * self.classes_per_task + self.tasks.saturating_sub(2) * self.new_per_task
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackboneConfig {
    pub hidden: usize,
    pub layers: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub lr_step_epochs: usize,
    pub lr_decay: f64,
    pub dropout: f64,
    pub bn_momentum: f64,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            hidden: 1000,
            layers: 3,
            epochs: t.epochs,
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
            lr_step_epochs: t.lr_step_epochs,
            lr_decay: t.lr_decay,
            dropout: t.dropout,
            bn_momentum: t.bn_momentum,
        }
    }
}

impl BackboneConfig {
    pub fn hidden_dims(&self) -> Vec<usize> {
        vec![self.hidden; self.layers]
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            lr_step_epochs: self.lr_step_epochs,
            lr_decay: self.lr_decay,
            epochs: self.epochs,
            batch_size: self.batch_size,
            dropout: self.dropout,
            bn_momentum: self.bn_momentum,
            seed,
            ..TrainConfig::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdirConfig {
    pub gamma0: f64,
    pub reg_exponent: f64,
}

impl Default for AdirConfig {
    fn default() -> Self {
        Self {
            gamma0: crate::adir::DEFAULT_GAMMA0,
            reg_exponent: crate::adir::DEFAULT_REG_EXPONENT,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MethodFlags {
    pub gda: bool,
    pub arm_reweight: bool,
    pub adaptive_gamma: bool,
}

impl Default for MethodFlags {
    fn default() -> Self {
        Self {
            gda: true,
            arm_reweight: true,
            adaptive_gamma: true,
        }
    }
}

impl MethodFlags {
    pub const NONE: MethodFlags = MethodFlags {
        gda: false,
        arm_reweight: false,
        adaptive_gamma: false,
    };

    /// Parses a comma list such as `gda,arm,adaptive`; an empty string or
    /// `none` turns everything off.
    pub fn parse_list(s: &str) -> Result<Self> {
        let mut f = MethodFlags::NONE;
        for tok in s.split(',').map(str::trim).filter(|t| !t.is_empty()) {
            match tok {
                "gda" => f.gda = true,
                "arm" | "arm_reweight" => f.arm_reweight = true,
                "adaptive" | "adaptive_gamma" => f.adaptive_gamma = true,
                "adir" => {
                    f.arm_reweight = true;
                    f.adaptive_gamma = true;
                }
                "none" => {}
                other => return Err(Error::config("run.flags", format!("unknown flag `{other}`"))),
            }
        }
        Ok(f)
    }

    pub fn adir(&self) -> bool {
        self.arm_reweight && self.adaptive_gamma
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Baseline {
    /// Incremental analytic classifier.
    Adir,
    /// Head fine-tuned by gradient descent on each task, no anti-forgetting.
    #[serde(alias = "lower_bound")]
    LowerBoundFinetune,
    /// Head trained on task 1 only and never updated.
    LowerBoundStatic,
    /// Backbone and classifier fit once on all tasks pooled.
    JointUpperBound,
}

impl Baseline {
    pub fn tag(&self) -> &'static str {
        match self {
            Baseline::Adir => "adir",
            Baseline::LowerBoundFinetune => "lower_bound",
            Baseline::LowerBoundStatic => "lower_bound_static",
            Baseline::JointUpperBound => "upper_bound",
        }
    }
}

impl FromStr for Baseline {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.to_string()))
            .map_err(|_| Error::config("run.baseline", format!("unknown baseline `{s}`")))
    }
}

/// A test-noise level: `clean` (frames as generated) or an SNR in dB.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SnrLevel {
    Clean,
    Db(f64),
}

impl SnrLevel {
    pub fn label(&self) -> String {
        match self {
            SnrLevel::Clean => "clean".into(),
            SnrLevel::Db(v) => format!("{v} dB"),
        }
    }

    pub fn parse_list(s: &str) -> Result<Vec<Self>> {
        s.split(',').map(|t| t.trim().parse()).collect()
    }
}

impl fmt::Display for SnrLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SnrLevel::Clean => f.write_str("clean"),
            SnrLevel::Db(v) => write!(f, "{v}"),
        }
    }
}

impl FromStr for SnrLevel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim();
        if t.eq_ignore_ascii_case("clean") {
            return Ok(SnrLevel::Clean);
        }
        let db = t.strip_suffix("dB").unwrap_or(t).trim();
        match db.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(SnrLevel::Db(v)),
            _ => Err(Error::config("snr", format!("cannot parse SNR token `{s}`"))),
        }
    }
}

impl Serialize for SnrLevel {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            SnrLevel::Clean => s.serialize_str("clean"),
            SnrLevel::Db(v) => s.serialize_f64(*v),
        }
    }
}

impl<'de> Deserialize<'de> for SnrLevel {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(SnrLevel::Db(v)),
            Raw::Text(t) => t.parse().map_err(serde::de::Error::custom),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub flags: MethodFlags,
    pub baseline: Baseline,
    /// Tail classes below `augment_rate · M_t` samples are augmented.
    pub augment_rate: f64,
    pub augment_noise: f64,
    pub snr_list: Vec<SnrLevel>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            flags: MethodFlags::default(),
            baseline: Baseline::Adir,
            augment_rate: crate::augment::DEFAULT_AUGMENT_RATE,
            augment_noise: crate::augment::DEFAULT_NOISE_SCALE,
            snr_list: vec![
                SnrLevel::Clean,
                SnrLevel::Db(20.0),
                SnrLevel::Db(10.0),
                SnrLevel::Db(0.0),
                SnrLevel::Db(-10.0),
            ],
        }
    }
}

impl Config {
    pub fn desk() -> Self {
        Self::from_json(DESK_PRESET).expect("bundled desk preset is valid")
    }

    pub fn paper() -> Self {
        Self::from_json(PAPER_PRESET).expect("bundled paper preset is valid")
    }

    /// Parses and validates. Errors carry the offending field path.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: Config = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            Error::config(path, e.into_inner().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let g = &self.geometry;
        let geometry = g.build()?;
        if g.frame_length < 1024 {
            return Err(Error::config("geometry.frame_length", "must be at least 1024"));
        }
        if g.max_lag == 0 || 2 * g.max_lag >= g.frame_length {
            return Err(Error::config("geometry.max_lag", "must be in 1..frame_length/2"));
        }
        if geometry.max_delay_samples() > g.max_lag as f64 {
            return Err(Error::config(
                "geometry.max_lag",
                format!(
                    "array spans {:.2} samples, beyond the lag window",
                    geometry.max_delay_samples()
                ),
            ));
        }
        let b = &self.benchmark;
        if b.tasks < 2 {
            return Err(Error::config("benchmark.tasks", "need at least 2 tasks"));
        }
        if b.classes_per_task == 0 {
            return Err(Error::config("benchmark.classes_per_task", "must be positive"));
        }
        if b.new_per_task == 0 || b.new_per_task > b.classes_per_task {
            return Err(Error::config("benchmark.new_per_task", "must be in 1..=classes_per_task"));
        }
        if b.universe_size() > N_BINS {
            return Err(Error::config(
                "benchmark.classes_per_task",
                format!("sequence needs {} distinct DoA bins, only {N_BINS} exist", b.universe_size()),
            ));
        }
        let l = &b.lambda_schedule;
        if !(l.start > 0.0) || !l.start.is_finite() {
            return Err(Error::config("benchmark.lambda_schedule.start", "lambda_schedule must start above 0"));
        }
        if !(l.at(b.tasks) > 0.0) || !l.step.is_finite() {
            return Err(Error::config("benchmark.lambda_schedule.step", "lambda_schedule must stay above 0"));
        }
        if b.n_max == 0 {
            return Err(Error::config("benchmark.n_max", "must be positive"));
        }
        if !(0.0..=1.0).contains(&b.test_fraction) {
            return Err(Error::config("benchmark.test_fraction", "must be in [0, 1]"));
        }
        if b.min_test_per_class == 0 {
            return Err(Error::config("benchmark.min_test_per_class", "must be positive"));
        }
        if let Some(s) = b.capture_snr_db {
            if !s.is_finite() {
                return Err(Error::config("benchmark.capture_snr_db", "must be finite"));
            }
        }
        if !(0.0..0.5).contains(&b.doa_jitter_deg) {
            return Err(Error::config("benchmark.doa_jitter_deg", "must be in [0, 0.5)"));
        }
        if !(b.acc_tolerance_deg >= 0.0) {
            return Err(Error::config("benchmark.acc_tolerance_deg", "must be non-negative"));
        }
        let bb = &self.backbone;
        if bb.hidden == 0 || bb.layers == 0 {
            return Err(Error::config("backbone.hidden", "hidden width and layer count must be positive"));
        }
        self.backbone
            .train_config(0)
            .validate()
            .map_err(|e| Error::config("backbone", e.to_string()))?;
        if !(self.adir.gamma0 > 0.0) {
            return Err(Error::config("adir.gamma0", "must be positive"));
        }
        if !self.adir.reg_exponent.is_finite() {
            return Err(Error::config("adir.reg_exponent", "must be finite"));
        }
        let r = &self.run;
        if !(r.augment_rate > 0.0 && r.augment_rate <= 1.0) {
            return Err(Error::config("run.augment_rate", "must be in (0, 1]"));
        }
        if !(r.augment_noise >= 0.0) {
            return Err(Error::config("run.augment_noise", "must be non-negative"));
        }
        Ok(())
    }
}
