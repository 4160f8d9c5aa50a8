//! Acceptance run: one PASS/FAIL line per criterion. Exits non-zero if any
//! criterion fails.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use kgan_core::data::{make_split, ImagePair};
use kgan_core::distill::{distill_loss, train_student, DistillConfig, TeacherStudentPair};
use kgan_core::gan::{
    build_noise_gan, build_student, build_teacher, discriminator_loss, generator_loss, train_gan, train_gan_observed,
    GanModel, GanSpec, Mode, OptimizerKind, TrainEvent, TrainingConfig,
};
use kgan_core::harness::gradcheck;
use kgan_core::metrics::{evaluate, scd, spatial_frequency, ssim, Synthesizer};
use kgan_core::nn::softmax_t;
use kgan_core::tensor::{random_tensor, Tensor};
use kgan_core::ImageGray;

mod common;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn criterion_1() -> Outcome {
    let t = Instant::now();
    let entries = match gradcheck::run_suite() {
        Ok(e) => e,
        Err(e) => return outcome(false, format!("suite error: {e}")),
    };
    let secs = t.elapsed().as_secs_f64();
    let worst = entries.iter().map(|e| e.max_rel_error).fold(0.0, f64::max);
    let failed = entries.iter().filter(|e| !e.passed()).count();
    outcome(
        failed == 0 && secs < 120.0,
        format!(
            "{}/{} checks within 1e-4 (worst {worst:.2e}); {secs:.1} s < 120 s",
            entries.len() - failed,
            entries.len()
        ),
    )
}

fn criterion_2() -> Outcome {
    let ln2 = std::f64::consts::LN_2;
    let half = Tensor::full(&[8], 0.5);
    let eq8 = generator_loss(&half).unwrap();
    let eq9 = discriminator_loss(&half, &half).unwrap();
    let draws = random_tensor(&[1000, 5], 0.0, 3.0, 2024);
    let mut worst: f64 = 0.0;
    for row in draws.data().chunks(5) {
        // Triple (alpha, l_soft, l_hard), plus a second loss pair for additivity.
        let cfg = DistillConfig {
            alpha: row[0] / 3.0,
            beta: 1.0 - row[0] / 3.0,
            ..DistillConfig::default()
        };
        let (s, h, s2, h2) = (row[1], row[2], row[3], row[4]);
        let direct = distill_loss(s, h, &cfg) - (cfg.alpha * s + cfg.beta * h);
        let additive = distill_loss(s + s2, h + h2, &cfg) - distill_loss(s, h, &cfg) - distill_loss(s2, h2, &cfg);
        worst = worst.max(direct.abs()).max(additive.abs());
    }
    let pass = (eq8 - ln2).abs() <= 1e-9 && (eq9 - 2.0 * ln2).abs() <= 1e-9 && worst <= 1e-12;
    outcome(
        pass,
        format!(
            "generator loss {eq8:.12} (ln 2), discriminator loss {eq9:.12} (2 ln 2), linearity residual {worst:.1e} over 1000 triples"
        ),
    )
}

fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&q| q > 0.0).map(|q| q * q.ln()).sum::<f64>()
}

fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &x)| if x > best.1 { (i, x) } else { best })
        .0
}

fn criterion_3() -> Outcome {
    let temps = [0.25, 0.5, 1.0, 1.5, 2.0, 3.0, 4.0, 8.0, 16.0, 64.0];
    let mut plain_err: f64 = 0.0;
    let mut entropy_drops = 0;
    let mut argmax_changes = 0;
    for seed in 0..100 {
        let z = random_tensor(&[6], -5.0, 5.0, seed);
        let q1 = softmax_t(&z, 1.0).unwrap();
        let e: Vec<f64> = z.data().iter().map(|x| x.exp()).collect();
        let total: f64 = e.iter().sum();
        for (q, ei) in q1.data().iter().zip(&e) {
            plain_err = plain_err.max((q - ei / total).abs());
        }
        let mut last = f64::NEG_INFINITY;
        for &t in &temps {
            let q = softmax_t(&z, t).unwrap();
            let h = entropy(q.data());
            if h < last - 1e-12 {
                entropy_drops += 1;
            }
            last = h;
            if argmax(q.data()) != argmax(z.data()) {
                argmax_changes += 1;
            }
        }
    }
    outcome(
        plain_err <= 1e-12 && entropy_drops == 0 && argmax_changes == 0,
        format!(
            "T=1 vs softmax max err {plain_err:.1e}; entropy decreases {entropy_drops}; argmax changes {argmax_changes} (100 vectors x {} temperatures)",
            temps.len()
        ),
    )
}

fn image(seed: u64, lo: f64, hi: f64) -> ImageGray {
    ImageGray::new(16, 16, random_tensor(&[256], lo, hi, seed).into_data()).unwrap()
}

fn criterion_4() -> Outcome {
    let mut self_err: f64 = 0.0;
    let mut sym_err: f64 = 0.0;
    let mut shift_err: f64 = 0.0;
    let mut scd_err: f64 = 0.0;
    let mut oracle_err: f64 = 0.0;
    for seed in 0..20 {
        let a = image(seed, 0.0, 0.5);
        let b = image(seed + 1000, 0.0, 0.5);
        let f = image(seed + 2000, 0.0, 1.0);
        self_err = self_err.max((ssim(&a, &a).unwrap() - 1.0).abs());
        sym_err = sym_err.max((ssim(&a, &b).unwrap() - ssim(&b, &a).unwrap()).abs());
        let shifted = ImageGray::new(16, 16, a.pixels().iter().map(|v| v + 0.25).collect()).unwrap();
        shift_err = shift_err.max((spatial_frequency(&shifted).unwrap() - spatial_frequency(&a).unwrap()).abs());
        let sum = ImageGray::new(16, 16, a.pixels().iter().zip(b.pixels()).map(|(x, y)| x + y).collect()).unwrap();
        scd_err = scd_err.max((scd(&sum, &a, &b).unwrap() - 2.0).abs());
        oracle_err = oracle_err
            .max((spatial_frequency(&f).unwrap() - common::sf_oracle(&f)).abs())
            .max((ssim(&f, &b).unwrap() - common::ssim_oracle(&f, &b)).abs())
            .max((scd(&f, &a, &b).unwrap() - common::scd_oracle(&f, &a, &b)).abs());
    }
    let sf_const = spatial_frequency(&ImageGray::filled(16, 16, 0.3).unwrap()).unwrap();
    let pass = self_err <= 1e-12
        && sym_err <= 1e-12
        && sf_const == 0.0
        && shift_err <= 1e-10
        && scd_err <= 1e-9
        && oracle_err <= 1e-9;
    outcome(
        pass,
        format!(
            "SSIM self {self_err:.1e}, symmetry {sym_err:.1e}; SF(const) {sf_const}; SF shift {shift_err:.1e}; SCD(A+B) {scd_err:.1e}; oracle gap {oracle_err:.1e}"
        ),
    )
}

fn criterion_5() -> Outcome {
    let t = Instant::now();
    // 96 pairs at the default 2/3 split give 64 training pairs: 8 batches of 8.
    let split = make_split(96, 8, 0, 2.0 / 3.0).unwrap();
    let cfg = TrainingConfig {
        epochs: 250,
        ..TrainingConfig::default()
    };
    let model = build_noise_gan(8, 0, Mode::Standard).unwrap();
    let (_, history) = match train_gan(model, &split.train, &cfg) {
        Ok(r) => r,
        Err(e) => return outcome(false, format!("training error: {e}")),
    };
    let secs = t.elapsed().as_secs_f64();
    let last = history.records.last().unwrap();
    let steps = cfg.epochs * split.train.len().div_ceil(cfg.batch_size);
    let band = |v: f64| (0.35..=0.65).contains(&v);
    outcome(
        band(last.mean_d_real) && band(last.mean_d_fake) && secs < 300.0,
        format!(
            "{steps} steps: final D(real) {:.4}, D(fake) {:.4} in [0.35, 0.65]; {secs:.1} s < 300 s",
            last.mean_d_real, last.mean_d_fake
        ),
    )
}

fn criterion_6() -> Outcome {
    let split = make_split(24, 8, 6, 2.0 / 3.0).unwrap();
    let cfg = TrainingConfig {
        epochs: 50,
        ..TrainingConfig::default()
    };
    let clip = cfg.clip_w;
    let model = build_noise_gan(8, 6, Mode::Wasserstein).unwrap();
    let mut critic_steps = 0usize;
    let mut worst: f64 = 0.0;
    let mut observer = |ev: TrainEvent<'_>| {
        if let TrainEvent::Discriminator { model, .. } = ev {
            critic_steps += 1;
            worst = worst.max(model.discriminator.params.max_abs());
        }
    };
    if let Err(e) = train_gan_observed(model, &split.train, &cfg, &mut observer) {
        return outcome(false, format!("training error: {e}"));
    }
    outcome(
        critic_steps >= 500 && worst <= clip,
        format!("{critic_steps} critic steps, max |w| {worst:.6} <= {clip}"),
    )
}

/// Settings for the size-16 image runs: the discriminator learns four
/// times slower than the generator so it does not saturate.
fn image_training(seed: u64) -> TrainingConfig {
    TrainingConfig {
        epochs: 40,
        learning_rate_g: 2e-4,
        learning_rate_d: 5e-5,
        optimizer: OptimizerKind::Adam {
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
        },
        seed,
        ..TrainingConfig::default()
    }
}

fn ssim_to_teacher(student: &GanModel, teacher: &GanModel, test: &[ImagePair]) -> f64 {
    let total: f64 = test
        .iter()
        .map(|p| {
            let s = student.synthesize(&p.modality_a).unwrap();
            let t = teacher.synthesize(&p.modality_a).unwrap();
            ssim(&s, &t).unwrap()
        })
        .sum();
    total / test.len() as f64
}

fn criterion_7(distilled_students: &mut Vec<(GanModel, Vec<ImagePair>)>) -> Outcome {
    let t = Instant::now();
    let mut wins = 0;
    let mut lines = Vec::new();
    for seed in 0..5u64 {
        // 60 pairs: 40 train, 20 held out.
        let split = make_split(60, 16, seed, 2.0 / 3.0).unwrap();
        let teacher = build_teacher(16, seed).unwrap();
        let (teacher, _) = train_gan(teacher, &split.train, &image_training(seed)).unwrap();
        let run = |dcfg: &DistillConfig| {
            let student = GanModel::build(&GanSpec::student(16, dcfg.scale), seed + 100).unwrap();
            let pair = TeacherStudentPair::new(&teacher, student).unwrap();
            train_student(pair, &split.train, &image_training(seed + 100), dcfg).unwrap().0
        };
        let distilled = run(&DistillConfig::default());
        let baseline = run(&DistillConfig {
            alpha: 0.0,
            gamma: 0.0,
            ..DistillConfig::default()
        });
        let sd = ssim_to_teacher(&distilled, &teacher, &split.test);
        let sb = ssim_to_teacher(&baseline, &teacher, &split.test);
        if sd > sb {
            wins += 1;
        }
        lines.push(format!("seed {seed}: {sd:.4} vs {sb:.4}"));
        distilled_students.push((distilled, split.test));
    }
    let secs = t.elapsed().as_secs_f64();
    outcome(
        wins >= 4 && secs < 900.0,
        format!(
            "distilled beats baseline SSIM-to-teacher in {wins}/5 seeds ({}); {secs:.0} s < 900 s",
            lines.join(", ")
        ),
    )
}

fn criterion_8() -> Outcome {
    let teacher = build_teacher(32, 0).unwrap().parameter_count();
    let student = build_student(32, 0, 0.5).unwrap().parameter_count();
    let ratio = student as f64 / teacher as f64;
    outcome(
        ratio < 0.6 && teacher == 176_035 && student == 45_011,
        format!("student {student} / teacher {teacher} = {:.1}% < 60% (size 32)", 100.0 * ratio),
    )
}

fn kgan(args: &[&str]) -> Result<(), String> {
    let o = Command::new(env!("CARGO_BIN_EXE_kgan"))
        .args(args)
        .env_remove("KGAN_SEED_OVERRIDE")
        .output()
        .map_err(|e| e.to_string())?;
    if o.status.success() {
        Ok(())
    } else {
        Err(format!("{args:?}: {}", String::from_utf8_lossy(&o.stderr).trim()))
    }
}

/// Toy pipeline at 8x8 with 200 teacher steps (40 pairs, batch 8, 40
/// epochs), then every command rerun from its emitted config copy.
fn criterion_9(toy_secs: &mut f64) -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let cfg = dir.join("cfg.json");
    std::fs::write(
        &cfg,
        r#"{"data": {"size": 8, "n_pairs": 60, "master_seed": 9},
            "teacher": {"training": {"epochs": 40, "seed": 9}},
            "student": {"training": {"epochs": 10, "seed": 10}}}"#,
    )
    .unwrap();
    let cfg = cfg.to_str().unwrap();
    let read = |p: &Path| std::fs::read(p).unwrap_or_default();
    let outputs = [
        ("train-teacher", dir.join("teacher"), "history.csv"),
        ("train-student", dir.join("student"), "history.csv"),
        ("evaluate", dir.join("eval"), "metrics.csv"),
    ];
    let first = (|| -> Result<Vec<Vec<u8>>, String> {
        kgan(&["gen-data", "--config", cfg])?;
        let t = Instant::now();
        kgan(&["train-teacher", "--config", cfg])?;
        *toy_secs = t.elapsed().as_secs_f64();
        kgan(&["train-student", "--config", cfg])?;
        kgan(&["evaluate", "--config", cfg])?;
        Ok(outputs.iter().map(|(_, d, f)| read(&d.join(f))).collect())
    })();
    let first = match first {
        Ok(f) => f,
        Err(e) => return outcome(false, e),
    };
    let mut identical = 0;
    for ((cmd, d, f), before) in outputs.iter().zip(&first) {
        let copy = dir.join(format!("{cmd}.json"));
        std::fs::copy(d.join("config.json"), &copy).unwrap();
        if let Err(e) = kgan(&[cmd, "--config", copy.to_str().unwrap(), "--force"]) {
            return outcome(false, e);
        }
        if !before.is_empty() && read(&d.join(f)) == *before {
            identical += 1;
        }
    }
    outcome(
        identical == outputs.len(),
        format!("{identical}/{} reruns from config copies byte-identical (teacher/student history, metrics)", outputs.len()),
    )
}

fn criterion_10(students: &[(GanModel, Vec<ImagePair>)]) -> Outcome {
    let mut worst = String::new();
    let mut pass = !students.is_empty();
    for (i, (model, test)) in students.iter().enumerate() {
        let report = evaluate(model, test).unwrap();
        let [sf, ss, sc] = report.mean();
        let finite = report.mean().iter().chain(report.std().iter()).all(|v| v.is_finite());
        let ok = finite && sf > 0.0 && sf <= 255.0 && ss > 0.0 && ss <= 1.0 && (-2.0..=2.0).contains(&sc);
        pass &= ok;
        if !ok || i == 0 {
            worst = format!("seed {i}: SF {sf:.3}, SSIM {ss:.4}, SCD {sc:.4}");
        }
    }
    outcome(
        pass,
        format!(
            "{} distilled students: mean SF in (0,255], SSIM in (0,1], SCD in [-2,2], all finite ({worst})",
            students.len()
        ),
    )
}

fn main() {
    let mut students = Vec::new();
    let mut toy_secs = f64::NAN;
    let mut results: Vec<(&str, Outcome)> = vec![
        ("1 gradient integrity", criterion_1()),
        ("2 loss closed forms", criterion_2()),
        ("3 distillation identities", criterion_3()),
        ("4 metric identities", criterion_4()),
        ("5 GAN equilibrium", criterion_5()),
        ("6 WGAN clipping", criterion_6()),
    ];
    results.push(("7 distillation efficacy", criterion_7(&mut students)));
    results.push(("8 reduced parameter count", criterion_8()));
    results.push(("9 determinism", criterion_9(&mut toy_secs)));
    results.push(("10 magnitude band", criterion_10(&students)));
    results.push((
        "toy training budget",
        outcome(toy_secs < 60.0, format!("8x8 teacher, 200 steps: {toy_secs:.1} s < 60 s")),
    ));
    let mut failed = 0;
    for (name, o) in &results {
        println!("{} [{name}] {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        failed += usize::from(!o.pass);
    }
    println!("{} criteria, {failed} failed", results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
