//! The `kgan` command line: data generation, teacher and student training,
//! evaluation and the gradient-check suite.
//!
//! Exit codes: 0 success, 1 usage or config error, 2 runtime or numeric
//! error.

mod config;
pub mod gradcheck;
mod plot;

pub use config::{
    DataConfig, EvalConfig, EvalModel, ExperimentConfig, StudentConfig, TeacherConfig, CONFIG_COPY,
    SEED_OVERRIDE_ENV,
};
pub use plot::loss_curve;

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::data::{make_split, read_dataset, write_dataset, MANIFEST_FILE};
use crate::distill::{train_student, TeacherStudentPair};
use crate::gan::{checkpoint, load_checkpoint, save_checkpoint, GanModel, GanSpec, TrainingHistory};
use crate::metrics::{evaluate, MetricsReport};
use crate::{Error, Result};

pub const HISTORY_FILE: &str = "history.csv";
pub const METRICS_FILE: &str = "metrics.csv";
pub const PLOT_FILE: &str = "loss_curve.pgm";

#[derive(Parser, Debug)]
#[command(name = "kgan", version, about = "Teacher/student GAN distillation on paired phantom images")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the paired phantom dataset.
    GenData(CommonArgs),
    /// Train the teacher GAN.
    TrainTeacher(CommonArgs),
    /// Distil a student from the trained teacher.
    TrainStudent(CommonArgs),
    /// Score a checkpoint on the test split.
    Evaluate(CommonArgs),
    /// Run the finite-difference gradient suite.
    Gradcheck(GradcheckArgs),
}

#[derive(Args, Debug)]
struct CommonArgs {
    /// Experiment config (JSON); relative paths resolve against its directory.
    #[arg(long)]
    config: PathBuf,
    /// Overwrite existing outputs.
    #[arg(long)]
    force: bool,
    /// Also render the loss curve as a PGM image.
    #[arg(long)]
    plot: bool,
    /// Checkpoint directory to evaluate instead of the configured one.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    /// Accepted for uniformity; the suite needs no configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Scale conv weight gradients by this factor (test fixture).
    #[arg(long, hide = true)]
    inject_conv_fault: Option<f64>,
}

/// Parses `args` (including the program name), runs the command and
/// returns the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = if code == 0 {
                write!(out, "{}", e.render())
            } else {
                write!(err, "{}", e.render())
            };
            return code;
        }
    };
    let result = match cli.command {
        Command::GenData(a) => ExperimentConfig::load(&a.config).and_then(|c| gen_data(&c, a.force, out)),
        Command::TrainTeacher(a) => {
            ExperimentConfig::load(&a.config).and_then(|c| train_teacher(&c, a.force, a.plot, out))
        }
        Command::TrainStudent(a) => {
            ExperimentConfig::load(&a.config).and_then(|c| train_student_cmd(&c, a.force, a.plot, out))
        }
        Command::Evaluate(a) => ExperimentConfig::load(&a.config)
            .and_then(|c| evaluate_cmd(&c, a.checkpoint.as_deref(), a.force, out).map(|_| ())),
        Command::Gradcheck(a) => return gradcheck_cmd(a.inject_conv_fault, out, err),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |e| Error::io(path, e)
}

fn refuse_overwrite(marker: &Path, force: bool) -> Result<()> {
    if marker.exists() && !force {
        return Err(Error::InvalidArgument(format!(
            "{} already exists; pass --force to overwrite",
            marker.display()
        )));
    }
    Ok(())
}

fn remove_if_exists(path: &Path) -> Result<()> {
    let res = if path.is_dir() {
        std::fs::remove_dir_all(path)
    } else {
        std::fs::remove_file(path)
    };
    match res {
        Err(e) if e.kind() != std::io::ErrorKind::NotFound => Err(Error::io(path, e)),
        _ => Ok(()),
    }
}

pub fn gen_data(cfg: &ExperimentConfig, force: bool, out: &mut dyn Write) -> Result<()> {
    let dir = &cfg.data.dir;
    refuse_overwrite(&dir.join(MANIFEST_FILE), force)?;
    for stale in ["a", "b", MANIFEST_FILE, CONFIG_COPY] {
        remove_if_exists(&dir.join(stale))?;
    }
    let d = &cfg.data;
    let split = make_split(d.n_pairs, d.size, d.master_seed, d.train_fraction)?;
    write_dataset(&split, dir)?;
    cfg.write_copy(dir)?;
    writeln!(
        out,
        "generated {} pairs ({} train / {} test) of {}x{} in {}",
        split.train.len() + split.test.len(),
        split.train.len(),
        split.test.len(),
        d.size,
        d.size,
        dir.display()
    )
    .map_err(io_err(dir))
}

fn load_data(cfg: &ExperimentConfig) -> Result<crate::data::DatasetSplit> {
    let manifest = cfg.data.dir.join(MANIFEST_FILE);
    if !manifest.exists() {
        return Err(Error::MissingInput(manifest));
    }
    read_dataset(&cfg.data.dir)
}

fn write_training_outputs(
    cfg: &ExperimentConfig,
    dir: &Path,
    model: &GanModel,
    history: &TrainingHistory,
    plot: bool,
) -> Result<()> {
    save_checkpoint(model, dir)?;
    let hist = dir.join(HISTORY_FILE);
    std::fs::write(&hist, history.to_csv()).map_err(io_err(&hist))?;
    if plot {
        crate::data::save_pgm(&loss_curve(history)?, &dir.join(PLOT_FILE))?;
    }
    cfg.write_copy(dir)
}

fn report_history(out: &mut dyn Write, role: &str, dir: &Path, history: &TrainingHistory) -> Result<()> {
    let line = match history.records.last() {
        Some(r) => format!(
            "{role}: {} epochs, final L_G={:.6} L_D={:.6} D(real)={:.6} D(fake)={:.6}; wrote {}",
            history.len(),
            r.generator_loss,
            r.discriminator_loss,
            r.mean_d_real,
            r.mean_d_fake,
            dir.display()
        ),
        None => format!("{role}: 0 epochs; wrote {}", dir.display()),
    };
    writeln!(out, "{line}").map_err(io_err(dir))
}

pub fn train_teacher(cfg: &ExperimentConfig, force: bool, plot: bool, out: &mut dyn Write) -> Result<()> {
    let dir = &cfg.teacher.dir;
    refuse_overwrite(&dir.join(checkpoint::SIDECAR_FILE), force)?;
    let data = load_data(cfg)?;
    let spec = GanSpec::teacher(cfg.data.size).with_mode(cfg.teacher.mode);
    let model = GanModel::build(&spec, cfg.teacher.training.seed)?;
    let (model, history) = crate::gan::train_gan(model, &data.train, &cfg.teacher.training)?;
    write_training_outputs(cfg, dir, &model, &history, plot)?;
    report_history(out, "teacher", dir, &history)
}

pub fn train_student_cmd(cfg: &ExperimentConfig, force: bool, plot: bool, out: &mut dyn Write) -> Result<()> {
    let dir = &cfg.student.dir;
    refuse_overwrite(&dir.join(checkpoint::SIDECAR_FILE), force)?;
    let teacher_marker = cfg.teacher.dir.join(checkpoint::SIDECAR_FILE);
    if !teacher_marker.exists() {
        return Err(Error::MissingInput(teacher_marker));
    }
    let teacher = load_checkpoint(&cfg.teacher.dir)?;
    let data = load_data(cfg)?;
    let spec = GanSpec::student(cfg.data.size, cfg.student.distill.scale);
    let student = GanModel::build(&spec, cfg.student.training.seed)?;
    let pair = TeacherStudentPair::new(&teacher, student)?;
    let (model, history) = train_student(pair, &data.train, &cfg.student.training, &cfg.student.distill)?;
    write_training_outputs(cfg, dir, &model, &history, plot)?;
    report_history(out, "student", dir, &history)
}

pub fn evaluate_cmd(
    cfg: &ExperimentConfig,
    checkpoint_dir: Option<&Path>,
    force: bool,
    out: &mut dyn Write,
) -> Result<MetricsReport> {
    let dir = &cfg.eval.dir;
    refuse_overwrite(&dir.join(METRICS_FILE), force)?;
    let ckpt = match checkpoint_dir {
        Some(p) => p.to_path_buf(),
        None => match cfg.eval.model {
            EvalModel::Teacher => cfg.teacher.dir.clone(),
            EvalModel::Student => cfg.student.dir.clone(),
        },
    };
    let model = load_checkpoint(&ckpt)?;
    let data = load_data(cfg)?;
    let report = evaluate(&model, &data.test)?;
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let path = dir.join(METRICS_FILE);
    std::fs::write(&path, report.to_csv()).map_err(io_err(&path))?;
    cfg.write_copy(dir)?;
    let [sf, ssim, scd] = report.mean();
    writeln!(out, "SF={sf:.6} SSIM={ssim:.6} SCD={scd:.6}").map_err(io_err(dir))?;
    Ok(report)
}

fn gradcheck_cmd(fault: Option<f64>, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let entries = match fault {
        Some(scale) => gradcheck::run_suite_with_conv_fault(scale),
        None => gradcheck::run_suite(),
    };
    let entries = match entries {
        Ok(e) => e,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            return 2;
        }
    };
    let _ = write!(out, "{}", gradcheck::format_table(&entries));
    let failed: Vec<&str> = entries.iter().filter(|e| !e.passed()).map(|e| e.name.as_str()).collect();
    if failed.is_empty() {
        0
    } else {
        let _ = writeln!(err, "gradient check failed for: {}", failed.join(", "));
        2
    }
}
