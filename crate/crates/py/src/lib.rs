//! Python bindings. Images cross the boundary as nested lists of floats
//! (`list[list[float]]`, row-major, values in `[0, 1]`); configs as JSON
//! strings with the same fields the `kgan` CLI reads.

use std::path::PathBuf;

use kgan_core::data::{self, ImagePair as CoreImagePair};
use kgan_core::distill::{self, DistillConfig, TeacherStudentPair};
use kgan_core::gan::{self, Conditioning, GanModel as CoreModel, Mode, TrainingConfig, TrainingHistory};
use kgan_core::harness::gradcheck as suite;
use kgan_core::metrics::{self, MetricsReport as CoreReport, Synthesizer};
use kgan_core::tensor::Tensor;
use kgan_core::{Error, ImageGray};
use pyo3::exceptions::{PyArithmeticError, PyFileNotFoundError, PyOSError, PyValueError};
use pyo3::prelude::*;

fn to_py_err(e: Error) -> PyErr {
    match e {
        Error::MissingInput(_) => PyFileNotFoundError::new_err(e.to_string()),
        Error::Io { .. } => PyOSError::new_err(e.to_string()),
        Error::NonFinite { .. } => PyArithmeticError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

trait OrPyErr<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> OrPyErr<T> for kgan_core::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(to_py_err)
    }
}

fn image_from_rows(rows: Vec<Vec<f64>>) -> PyResult<ImageGray> {
    let h = rows.len();
    let w = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != w) {
        return Err(PyValueError::new_err("image rows must all have the same length"));
    }
    ImageGray::new(h, w, rows.into_iter().flatten().collect()).py()
}

fn image_to_rows(img: &ImageGray) -> Vec<Vec<f64>> {
    img.pixels().chunks(img.width()).map(<[f64]>::to_vec).collect()
}

fn matrix(rows: Vec<Vec<f64>>) -> PyResult<Tensor> {
    let n = rows.len();
    let k = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != k) {
        return Err(PyValueError::new_err("rows must all have the same length"));
    }
    Tensor::new([n, k], rows.into_iter().flatten().collect()).py()
}

fn vector(v: Vec<f64>) -> PyResult<Tensor> {
    Tensor::from_vec(v).py()
}

fn parse_json<T: serde::de::DeserializeOwned + Default>(text: Option<&str>) -> PyResult<T> {
    match text {
        None => Ok(T::default()),
        Some(t) => serde_json::from_str(t).map_err(|e| PyValueError::new_err(format!("config: {e}"))),
    }
}

/// Co-registered phantom images; `modality_a` is the source, `modality_b`
/// the target.
#[pyclass(frozen, skip_from_py_object, module = "kgan")]
#[derive(Clone)]
struct ImagePair {
    inner: CoreImagePair,
}

#[pymethods]
impl ImagePair {
    #[new]
    #[pyo3(signature = (modality_a, modality_b, pair_id=0, seed=0))]
    fn new(modality_a: Vec<Vec<f64>>, modality_b: Vec<Vec<f64>>, pair_id: u64, seed: u64) -> PyResult<Self> {
        let a = image_from_rows(modality_a)?;
        let b = image_from_rows(modality_b)?;
        if !a.same_size(&b) {
            return Err(PyValueError::new_err("modalities must share dimensions"));
        }
        Ok(Self {
            inner: CoreImagePair {
                pair_id,
                seed,
                modality_a: a,
                modality_b: b,
            },
        })
    }

    #[getter]
    fn pair_id(&self) -> u64 {
        self.inner.pair_id
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    #[getter]
    fn modality_a(&self) -> Vec<Vec<f64>> {
        image_to_rows(&self.inner.modality_a)
    }

    #[getter]
    fn modality_b(&self) -> Vec<Vec<f64>> {
        image_to_rows(&self.inner.modality_b)
    }

    fn __repr__(&self) -> String {
        let s = self.inner.modality_a.height();
        format!("ImagePair(pair_id={}, seed={}, size={s})", self.inner.pair_id, self.inner.seed)
    }
}

fn wrap_pairs(pairs: Vec<CoreImagePair>) -> Vec<ImagePair> {
    pairs.into_iter().map(|inner| ImagePair { inner }).collect()
}

fn unwrap_pairs(pairs: &[PyRef<'_, ImagePair>]) -> Vec<CoreImagePair> {
    pairs.iter().map(|p| p.inner.clone()).collect()
}

/// A generator/discriminator pair with its optimizer state.
#[pyclass(frozen, skip_from_py_object, module = "kgan")]
#[derive(Clone)]
struct GanModel {
    inner: CoreModel,
}

fn parse_mode(mode: &str) -> PyResult<Mode> {
    match mode {
        "standard" => Ok(Mode::Standard),
        "wasserstein" => Ok(Mode::Wasserstein),
        _ => Err(PyValueError::new_err(format!("mode must be 'standard' or 'wasserstein', got {mode:?}"))),
    }
}

#[pymethods]
impl GanModel {
    #[staticmethod]
    #[pyo3(signature = (image_size, seed=0))]
    fn teacher(image_size: usize, seed: u64) -> PyResult<Self> {
        Ok(Self {
            inner: gan::build_teacher(image_size, seed).py()?,
        })
    }

    #[staticmethod]
    #[pyo3(signature = (image_size, seed=0, scale=0.5))]
    fn student(image_size: usize, seed: u64, scale: f64) -> PyResult<Self> {
        Ok(Self {
            inner: gan::build_student(image_size, seed, scale).py()?,
        })
    }

    /// Noise-conditioned model: the generator maps latent vectors to images.
    #[staticmethod]
    #[pyo3(signature = (image_size, seed=0, mode="standard"))]
    fn noise(image_size: usize, seed: u64, mode: &str) -> PyResult<Self> {
        Ok(Self {
            inner: gan::build_noise_gan(image_size, seed, parse_mode(mode)?).py()?,
        })
    }

    #[staticmethod]
    fn load(dir: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: gan::load_checkpoint(&dir).py()?,
        })
    }

    fn save(&self, dir: PathBuf) -> PyResult<()> {
        gan::save_checkpoint(&self.inner, &dir).py()
    }

    #[getter]
    fn parameter_count(&self) -> usize {
        self.inner.parameter_count()
    }

    #[getter]
    fn image_size(&self) -> usize {
        self.inner.image_size
    }

    #[getter]
    fn scale(&self) -> f64 {
        self.inner.scale
    }

    #[getter]
    fn mode(&self) -> &'static str {
        match self.inner.mode {
            Mode::Standard => "standard",
            Mode::Wasserstein => "wasserstein",
        }
    }

    #[getter]
    fn conditioning(&self) -> &'static str {
        match self.inner.conditioning {
            Conditioning::Noise => "noise",
            Conditioning::Image => "image",
        }
    }

    #[getter]
    fn latent_dim(&self) -> usize {
        self.inner.latent_dim
    }

    /// Generator output for one modality-A image.
    fn synthesize(&self, image: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        let out = self.inner.synthesize(&image_from_rows(image)?).py()?;
        Ok(image_to_rows(&out))
    }

    /// Generator outputs for a batch of flattened sources (images for
    /// image-conditioned models, latent vectors for noise models).
    fn generate(&self, sources: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        let src = self.source_tensor(sources)?;
        let out = self.inner.generate(&src).py()?;
        let per = out.numel() / out.shape()[0];
        Ok(out.data().chunks(per).map(<[f64]>::to_vec).collect())
    }

    /// Discriminator scores: probabilities of "real" in standard mode, raw
    /// critic values in wasserstein mode.
    fn discriminate(&self, sources: Vec<Vec<f64>>, candidates: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
        let m = candidates.len();
        let src = self.source_tensor(sources)?;
        let s = self.inner.image_size;
        let cand = Tensor::new([m, 1, s, s], candidates.into_iter().flatten().collect()).py()?;
        Ok(self.inner.discriminate(&src, &cand).py()?.into_data())
    }

    fn __repr__(&self) -> String {
        format!(
            "GanModel(mode={:?}, conditioning={:?}, image_size={}, scale={}, parameters={})",
            self.mode(),
            self.conditioning(),
            self.inner.image_size,
            self.inner.scale,
            self.inner.parameter_count()
        )
    }
}

impl GanModel {
    fn source_tensor(&self, sources: Vec<Vec<f64>>) -> PyResult<Tensor> {
        let shape = self.inner.source_shape(sources.len());
        Tensor::new(shape, sources.into_iter().flatten().collect()).py()
    }
}

/// Per-epoch rows `(epoch, L_G, L_D, mean_D_real, mean_D_fake)`.
#[pyclass(frozen, module = "kgan")]
struct History {
    inner: TrainingHistory,
}

#[pymethods]
impl History {
    #[getter]
    fn records(&self) -> Vec<(usize, f64, f64, f64, f64)> {
        self.inner
            .records
            .iter()
            .map(|r| (r.epoch, r.generator_loss, r.discriminator_loss, r.mean_d_real, r.mean_d_fake))
            .collect()
    }

    fn to_csv(&self) -> String {
        self.inner.to_csv()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

#[pyclass(frozen, module = "kgan")]
struct MetricsReport {
    inner: CoreReport,
}

#[pymethods]
impl MetricsReport {
    /// `(id, sf, ssim, scd)` per test image.
    #[getter]
    fn rows(&self) -> Vec<(String, f64, f64, f64)> {
        self.inner.rows.iter().map(|r| (r.id.clone(), r.sf, r.ssim, r.scd)).collect()
    }

    fn mean(&self) -> (f64, f64, f64) {
        let [a, b, c] = self.inner.mean();
        (a, b, c)
    }

    fn std(&self) -> (f64, f64, f64) {
        let [a, b, c] = self.inner.std();
        (a, b, c)
    }

    fn to_csv(&self) -> String {
        self.inner.to_csv()
    }
}

#[pyfunction]
fn phantom_pair(seed: u64, size: usize) -> PyResult<ImagePair> {
    Ok(ImagePair {
        inner: data::generate_phantom_pair(seed, size).py()?,
    })
}

/// Returns `(train, test)` lists of pairs.
#[pyfunction]
#[pyo3(signature = (n_pairs, size, master_seed=0, train_fraction=0.6666666666666666))]
fn make_split(
    n_pairs: usize,
    size: usize,
    master_seed: u64,
    train_fraction: f64,
) -> PyResult<(Vec<ImagePair>, Vec<ImagePair>)> {
    let s = data::make_split(n_pairs, size, master_seed, train_fraction).py()?;
    Ok((wrap_pairs(s.train), wrap_pairs(s.test)))
}

#[pyfunction]
fn read_dataset(dir: PathBuf) -> PyResult<(Vec<ImagePair>, Vec<ImagePair>)> {
    let s = data::read_dataset(&dir).py()?;
    Ok((wrap_pairs(s.train), wrap_pairs(s.test)))
}

#[pyfunction]
fn write_dataset(train: Vec<PyRef<'_, ImagePair>>, test: Vec<PyRef<'_, ImagePair>>, dir: PathBuf) -> PyResult<()> {
    let split = data::DatasetSplit {
        train: unwrap_pairs(&train),
        test: unwrap_pairs(&test),
    };
    data::write_dataset(&split, &dir).py().map(|_| ())
}

#[pyfunction]
fn spatial_frequency(image: Vec<Vec<f64>>) -> PyResult<f64> {
    metrics::spatial_frequency(&image_from_rows(image)?).py()
}

#[pyfunction]
fn ssim(a: Vec<Vec<f64>>, b: Vec<Vec<f64>>) -> PyResult<f64> {
    metrics::ssim(&image_from_rows(a)?, &image_from_rows(b)?).py()
}

#[pyfunction]
fn scd(fused: Vec<Vec<f64>>, src_a: Vec<Vec<f64>>, src_b: Vec<Vec<f64>>) -> PyResult<f64> {
    metrics::scd(&image_from_rows(fused)?, &image_from_rows(src_a)?, &image_from_rows(src_b)?).py()
}

/// Row-wise softmax of `logits / temperature`.
#[pyfunction]
#[pyo3(signature = (logits, temperature=1.0))]
fn softmax_t(logits: Vec<Vec<f64>>, temperature: f64) -> PyResult<Vec<Vec<f64>>> {
    let t = matrix(logits)?;
    let k = t.shape()[1];
    let q = kgan_core::nn::softmax_t(&t, temperature).py()?;
    Ok(q.data().chunks(k).map(<[f64]>::to_vec).collect())
}

#[pyfunction]
fn generator_loss(d_fake: Vec<f64>) -> PyResult<f64> {
    gan::generator_loss(&vector(d_fake)?).py()
}

#[pyfunction]
fn discriminator_loss(d_real: Vec<f64>, d_fake: Vec<f64>) -> PyResult<f64> {
    gan::discriminator_loss(&vector(d_real)?, &vector(d_fake)?).py()
}

/// `(critic_objective, generator_loss)` for raw critic outputs.
#[pyfunction]
fn wgan_losses(critic_real: Vec<f64>, critic_fake: Vec<f64>) -> PyResult<(f64, f64)> {
    gan::wgan_losses(&vector(critic_real)?, &vector(critic_fake)?).py()
}

#[pyfunction]
fn soft_label_loss(student_logits: Vec<Vec<f64>>, teacher_logits: Vec<Vec<f64>>, temperature: f64) -> PyResult<f64> {
    distill::soft_label_loss(&matrix(student_logits)?, &matrix(teacher_logits)?, temperature).py()
}

#[pyfunction]
fn hard_label_loss(student_probs: Vec<f64>, labels: Vec<f64>) -> PyResult<f64> {
    distill::hard_label_loss(&vector(student_probs)?, &vector(labels)?).py()
}

#[pyfunction]
#[pyo3(signature = (l_soft, l_hard, alpha=0.7, beta=0.3))]
fn distill_loss(l_soft: f64, l_hard: f64, alpha: f64, beta: f64) -> f64 {
    let cfg = DistillConfig {
        alpha,
        beta,
        ..DistillConfig::default()
    };
    distill::distill_loss(l_soft, l_hard, &cfg)
}

/// Trains a copy of `model`; `config` is a JSON training block.
#[pyfunction]
#[pyo3(signature = (model, pairs, config=None))]
fn train_gan(
    py: Python<'_>,
    model: &GanModel,
    pairs: Vec<PyRef<'_, ImagePair>>,
    config: Option<&str>,
) -> PyResult<(GanModel, History)> {
    let cfg: TrainingConfig = parse_json(config)?;
    let data = unwrap_pairs(&pairs);
    let start = model.inner.clone();
    let (inner, history) = py.detach(|| gan::train_gan(start, &data, &cfg)).py()?;
    Ok((GanModel { inner }, History { inner: history }))
}

/// Distils a copy of `student` from the frozen `teacher`.
#[pyfunction]
#[pyo3(signature = (teacher, student, pairs, config=None, distill=None))]
fn train_student(
    py: Python<'_>,
    teacher: &GanModel,
    student: &GanModel,
    pairs: Vec<PyRef<'_, ImagePair>>,
    config: Option<&str>,
    distill: Option<&str>,
) -> PyResult<(GanModel, History)> {
    let cfg: TrainingConfig = parse_json(config)?;
    let dcfg: DistillConfig = parse_json(distill)?;
    let data = unwrap_pairs(&pairs);
    let (t, s) = (teacher.inner.clone(), student.inner.clone());
    let (inner, history) = py
        .detach(|| {
            let pair = TeacherStudentPair::new(&t, s)?;
            distill::train_student(pair, &data, &cfg, &dcfg)
        })
        .py()?;
    Ok((GanModel { inner }, History { inner: history }))
}

#[pyfunction]
fn evaluate(model: &GanModel, pairs: Vec<PyRef<'_, ImagePair>>) -> PyResult<MetricsReport> {
    Ok(MetricsReport {
        inner: metrics::evaluate(&model.inner, &unwrap_pairs(&pairs)).py()?,
    })
}

/// `(name, max_relative_error, passed)` for every finite-difference check.
#[pyfunction]
fn gradcheck(py: Python<'_>) -> PyResult<Vec<(String, f64, bool)>> {
    let entries = py.detach(suite::run_suite).py()?;
    Ok(entries.into_iter().map(|e| {
        let ok = e.passed();
        (e.name, e.max_rel_error, ok)
    }).collect())
}

/// Runs the command line in-process; returns `(exit_code, stdout, stderr)`.
#[pyfunction]
fn run_cli(py: Python<'_>, args: Vec<String>) -> (i32, String, String) {
    py.detach(|| {
        let (mut out, mut err) = (Vec::new(), Vec::new());
        let argv = std::iter::once("kgan".to_string()).chain(args);
        let code = kgan_core::harness::run(argv, &mut out, &mut err);
        (
            code,
            String::from_utf8_lossy(&out).into_owned(),
            String::from_utf8_lossy(&err).into_owned(),
        )
    })
}

#[pymodule]
fn kgan(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<ImagePair>()?;
    m.add_class::<GanModel>()?;
    m.add_class::<History>()?;
    m.add_class::<MetricsReport>()?;
    m.add_function(wrap_pyfunction!(phantom_pair, m)?)?;
    m.add_function(wrap_pyfunction!(make_split, m)?)?;
    m.add_function(wrap_pyfunction!(read_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(write_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(spatial_frequency, m)?)?;
    m.add_function(wrap_pyfunction!(ssim, m)?)?;
    m.add_function(wrap_pyfunction!(scd, m)?)?;
    m.add_function(wrap_pyfunction!(softmax_t, m)?)?;
    m.add_function(wrap_pyfunction!(generator_loss, m)?)?;
    m.add_function(wrap_pyfunction!(discriminator_loss, m)?)?;
    m.add_function(wrap_pyfunction!(wgan_losses, m)?)?;
    m.add_function(wrap_pyfunction!(soft_label_loss, m)?)?;
    m.add_function(wrap_pyfunction!(hard_label_loss, m)?)?;
    m.add_function(wrap_pyfunction!(distill_loss, m)?)?;
    m.add_function(wrap_pyfunction!(train_gan, m)?)?;
    m.add_function(wrap_pyfunction!(train_student, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(gradcheck, m)?)?;
    m.add_function(wrap_pyfunction!(run_cli, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
