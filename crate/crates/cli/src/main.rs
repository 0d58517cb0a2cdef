use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use sha2::{Digest, Sha256};

use ssl_gcil::checkpoint::Checkpoint;
use ssl_gcil::config::{Baseline, Config, MethodFlags, SnrLevel, DESK_PRESET, PAPER_PRESET};
use ssl_gcil::dataset::{read_dataset, render_tasks, write_dataset, Metadata, TaskData};
use ssl_gcil::harness::{
    ablation_csv, acc_matrix_csv, build_tasks, run_on_tasks, snr_sweep, summary_csv, sweep_csv, train_sequence,
    AblationRow, EvalReport, TaskSequence,
};
use ssl_gcil::Error;

/// Exemplar-free class-incremental sound source localization benchmark.
#[derive(Parser)]
#[command(name = "ssl-gcil", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render the task sequence and write per-task feature files.
    GenData(Common),
    /// Train and evaluate one method over the sequence.
    Run(RunArgs),
    /// The 2x2 {GDA} x {ADIR} grid on shared data.
    Ablate(Common),
    /// Evaluate one trained method on test sets re-rendered at several SNRs.
    SweepSnr(SweepArgs),
}

#[derive(Args)]
struct Common {
    /// JSON config file, or a bundled preset name (`desk`, `paper`).
    #[arg(long)]
    config: String,
    #[arg(long)]
    out: PathBuf,
    /// Overrides `run.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Allow writing into a non-empty output directory.
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct MethodArgs {
    /// Comma-separated subset of `gda,arm,adaptive` (or `none`).
    #[arg(long)]
    flags: Option<String>,
    /// adir | lower_bound | lower_bound_static | joint_upper_bound
    #[arg(long)]
    baseline: Option<String>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    method: MethodArgs,
    /// Dataset directory from `gen-data`; rendered inline when omitted.
    #[arg(long)]
    data: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    method: MethodArgs,
    /// Comma-separated levels in dB, or `clean`; defaults to `run.snr_list`.
    #[arg(long)]
    snr: Option<String>,
}

#[derive(Debug)]
enum Failure {
    Config(String),
    Io(String),
    MissingInput(String),
    Numeric(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Io(_) => 3,
            Failure::MissingInput(_) => 4,
            Failure::Numeric(_) => 5,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Config(m) | Failure::Io(m) | Failure::MissingInput(m) | Failure::Numeric(m) => m,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let msg = e.to_string();
        match e.root() {
            Error::Config { .. } => Failure::Config(msg),
            Error::Io(_) | Error::Json(_) | Error::Parse(_) => Failure::Io(msg),
            _ => Failure::Numeric(msg),
        }
    }
}

fn io_err(path: &Path, e: std::io::Error) -> Failure {
    Failure::Io(format!("{}: {e}", path.display()))
}

type Outcome<T> = Result<T, Failure>;

#[derive(Serialize)]
struct StageTime {
    stage: String,
    started_unix_s: f64,
    seconds: f64,
}

#[derive(Serialize)]
struct Manifest {
    command: String,
    config_path: String,
    config_sha256: String,
    seed: u64,
    out: String,
    version: String,
    stages: Vec<StageTime>,
}

impl Manifest {
    fn write(&self, out: &Path) -> Outcome<()> {
        let path = out.join("manifest.json");
        let text = serde_json::to_string_pretty(self).expect("manifest serializes") + "\n";
        fs::write(&path, text).map_err(|e| io_err(&path, e))
    }

    fn time<T>(&mut self, out: &Path, stage: &str, f: impl FnOnce() -> Outcome<T>) -> Outcome<T> {
        let started = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0.0, |d| d.as_secs_f64());
        let t = Instant::now();
        let r = f()?;
        self.stages.push(StageTime {
            stage: stage.into(),
            started_unix_s: started,
            seconds: t.elapsed().as_secs_f64(),
        });
        self.write(out)?;
        Ok(r)
    }
}

fn load_config(spec: &str, seed: Option<u64>) -> Outcome<(Config, String)> {
    let text = match (Path::new(spec).exists(), spec) {
        (true, _) => fs::read_to_string(spec).map_err(|e| io_err(Path::new(spec), e))?,
        (false, "desk") => DESK_PRESET.to_string(),
        (false, "paper") => PAPER_PRESET.to_string(),
        (false, _) => return Err(Failure::MissingInput(format!("config file `{spec}` not found"))),
    };
    let mut config = Config::from_json(&text)?;
    if let Some(s) = seed {
        config.run.seed = s;
    }
    let digest = Sha256::digest(text.as_bytes());
    let hash = digest.iter().map(|b| format!("{b:02x}")).collect();
    Ok((config, hash))
}

fn apply_method(config: &mut Config, m: &MethodArgs) -> Outcome<()> {
    if let Some(f) = &m.flags {
        config.run.flags = MethodFlags::parse_list(f)?;
    }
    if let Some(b) = &m.baseline {
        config.run.baseline = b.parse()?;
    }
    Ok(())
}

fn prepare_out(out: &Path, force: bool) -> Outcome<()> {
    if let Ok(mut entries) = fs::read_dir(out) {
        if entries.next().is_some() && !force {
            return Err(Failure::Io(format!(
                "output directory {} is not empty (pass --force to write into it)",
                out.display()
            )));
        }
    }
    fs::create_dir_all(out).map_err(|e| io_err(out, e))
}

fn write(out: &Path, name: &str, text: &str) -> Outcome<()> {
    let path = out.join(name);
    fs::write(&path, text).map_err(|e| io_err(&path, e))
}

fn start(command: &str, c: &Common) -> Outcome<(Config, Manifest)> {
    let (config, hash) = load_config(&c.config, c.seed)?;
    prepare_out(&c.out, c.force)?;
    let manifest = Manifest {
        command: command.into(),
        config_path: c.config.clone(),
        config_sha256: hash,
        seed: config.run.seed,
        out: c.out.display().to_string(),
        version: env!("CARGO_PKG_VERSION").into(),
        stages: Vec::new(),
    };
    manifest.write(&c.out)?;
    Ok((config, manifest))
}

fn generate(config: &Config, manifest: &mut Manifest, out: &Path) -> Outcome<(TaskSequence, Vec<TaskData>)> {
    let seq = manifest.time(out, "tasks", || Ok(build_tasks(config, config.run.seed)?))?;
    let data = manifest.time(out, "render", || Ok(render_tasks(config, &seq)?))?;
    Ok((seq, data))
}

fn load_data(dir: &Path, config: &Config) -> Outcome<(TaskSequence, Vec<TaskData>)> {
    if !dir.join(ssl_gcil::dataset::METADATA_FILE).is_file() {
        return Err(Failure::MissingInput(format!("no dataset found in {}", dir.display())));
    }
    let (meta, data) = read_dataset(dir)?;
    if meta.config.geometry != config.geometry || meta.config.benchmark != config.benchmark {
        return Err(Failure::Config(format!(
            "dataset in {} was generated with different geometry/benchmark settings",
            dir.display()
        )));
    }
    Ok((meta.sequence, data))
}

fn print_summary(r: &EvalReport) {
    let bwt = r.bwt.map_or("n/a".to_string(), |b| format!("{:.4}", 100.0 * b));
    println!("ACC={:.4} MAE={:.4} BWT={bwt}", 100.0 * r.final_acc, r.final_mae);
}

fn write_report(out: &Path, report: &EvalReport) -> Outcome<()> {
    write(out, "report.json", &report.to_json())?;
    write(out, "acc_matrix.csv", &acc_matrix_csv(&report.acc_matrix))?;
    write(out, "summary.csv", &summary_csv(&[report]))
}

fn cmd_gen_data(c: &Common) -> Outcome<()> {
    let (config, mut manifest) = start("gen-data", c)?;
    let (seq, data) = generate(&config, &mut manifest, &c.out)?;
    let meta = Metadata::new(&config, seq);
    manifest.time(&c.out, "write", || Ok(write_dataset(&c.out, &meta, &data)?))?;
    println!("wrote {} tasks to {}", data.len(), c.out.display());
    Ok(())
}

fn cmd_run(a: &RunArgs) -> Outcome<()> {
    let (mut config, mut manifest) = start("run", &a.common)?;
    apply_method(&mut config, &a.method)?;
    let out = &a.common.out;
    let (seq, data) = match &a.data {
        Some(dir) => manifest.time(out, "load", || load_data(dir, &config))?,
        None => generate(&config, &mut manifest, out)?,
    };
    let (report, trained) = manifest.time(out, "train+evaluate", || Ok(run_on_tasks(&config, &seq, &data)?))?;
    write_report(out, &report)?;
    let checkpoint = Checkpoint::new(&config, trained.mlp, None);
    checkpoint
        .save(&out.join("checkpoint.json"))
        .map_err(|e| Failure::Io(e.to_string()))?;
    print_summary(&report);
    Ok(())
}

/// Table rows (GDA, ADIR): without ADIR the classifier is the fine-tuned
/// gradient head.
fn ablation_cells() -> [(bool, bool); 4] {
    [(false, false), (true, false), (false, true), (true, true)]
}

fn cmd_ablate(c: &Common) -> Outcome<()> {
    let (config, mut manifest) = start("ablate", c)?;
    let (seq, data) = generate(&config, &mut manifest, &c.out)?;
    let mut rows = Vec::with_capacity(4);
    for (gda, adir) in ablation_cells() {
        let mut cell = config.clone();
        cell.run.flags = MethodFlags {
            gda,
            arm_reweight: adir,
            adaptive_gamma: adir,
        };
        cell.run.baseline = if adir {
            Baseline::Adir
        } else {
            Baseline::LowerBoundFinetune
        };
        let label = format!("gda={gda},adir={adir}");
        let (report, _) = manifest.time(&c.out, &label, || Ok(run_on_tasks(&cell, &seq, &data)?))?;
        print!("{label} ");
        print_summary(&report);
        rows.push(AblationRow { gda, adir, report });
    }
    write(&c.out, "ablation.csv", &ablation_csv(&rows))?;
    let reports: Vec<&EvalReport> = rows.iter().map(|r| &r.report).collect();
    write(&c.out, "summary.csv", &summary_csv(&reports))
}

fn cmd_sweep(a: &SweepArgs) -> Outcome<()> {
    let levels = match &a.snr {
        Some(s) => SnrLevel::parse_list(s).map_err(|e| Failure::Config(e.to_string()))?,
        None => Vec::new(),
    };
    let (mut config, mut manifest) = start("sweep-snr", &a.common)?;
    apply_method(&mut config, &a.method)?;
    let levels = if levels.is_empty() { config.run.snr_list.clone() } else { levels };
    let out = &a.common.out;
    let (seq, data) = generate(&config, &mut manifest, out)?;
    let trained = manifest.time(out, "train", || Ok(train_sequence(&config, &seq, &data)?))?;
    let sweep = manifest.time(out, "sweep", || Ok(snr_sweep(&config, &seq, &data, &trained, &levels)?))?;
    let rows: Vec<(String, &EvalReport)> = sweep.rows.iter().map(|r| (r.snr.to_string(), &r.report)).collect();
    write(out, "sweep.csv", &sweep_csv(&rows))?;
    for r in &sweep.rows {
        print!("snr={} ", r.snr);
        print_summary(&r.report);
    }
    if sweep.rows.len() > 1 {
        println!("Avg. ACC={:.4} MAE={:.4}", 100.0 * sweep.avg_acc, sweep.avg_mae);
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::GenData(c) => cmd_gen_data(c),
        Command::Run(a) => cmd_run(a),
        Command::Ablate(c) => cmd_ablate(c),
        Command::SweepSnr(a) => cmd_sweep(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
