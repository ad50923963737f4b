//! Python bindings. Layouts cross the boundary as lists of
//! `(category, cx, cy, w, h)` tuples.

use laydiff::data::{gen_synthetic, perturb as perturb_layout, SplitRatios, SyntheticSpec};
use laydiff::denoiser::{self, Checkpoint, DenoiserConfig, TrainConfig};
use laydiff::diffusion::{self, DiffusionSchedule, ScheduleConfig};
use laydiff::layout::{BBox, Element, Layout};
use laydiff::metrics;
use laydiff::sampler::{self, SampleOptions};
use laydiff::task::{make_condition, ConditionOptions, TaskCondition, TaskKind};
use laydiff::tokens::{self, TokenSeq};
use laydiff::{seed, Modality, QuantizerKind};
use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

type PyLayout = Vec<(u32, f64, f64, f64, f64)>;

fn err(e: laydiff::Error) -> PyErr {
    match e.class() {
        laydiff::ErrorClass::Usage => PyValueError::new_err(e.to_string()),
        laydiff::ErrorClass::Numeric => PyRuntimeError::new_err(e.to_string()),
        laydiff::ErrorClass::Data => match e {
            laydiff::Error::Io(_) => PyIOError::new_err(e.to_string()),
            _ => PyValueError::new_err(e.to_string()),
        },
    }
}

fn to_layout(l: PyLayout) -> Layout {
    Layout::new(l.into_iter().map(|(c, x, y, w, h)| Element::new(c, BBox::new(x, y, w, h))).collect())
}

fn from_layout(l: &Layout) -> PyLayout {
    l.elements.iter().map(|e| (e.category, e.bbox.cx, e.bbox.cy, e.bbox.w, e.bbox.h)).collect()
}

fn modality(name: &str) -> PyResult<Modality> {
    Modality::ALL
        .into_iter()
        .find(|m| m.name() == name || (name == "category" && *m == Modality::Category))
        .ok_or_else(|| PyValueError::new_err(format!("unknown modality {name:?}; use cat, x, y, w or h")))
}

#[pyclass(module = "pylaydiff", name = "Vocabulary", skip_from_py_object)]
#[derive(Clone)]
struct PyVocabulary {
    inner: laydiff::Vocabulary,
}

#[pymethods]
impl PyVocabulary {
    /// Evenly spaced centroids.
    #[staticmethod]
    fn uniform(num_categories: u32, bins: usize) -> Self {
        PyVocabulary {
            inner: laydiff::Vocabulary::uniform(num_categories, bins),
        }
    }

    #[staticmethod]
    #[pyo3(signature = (layouts, num_categories, bins=32, quantizer="kmeans", seed=0))]
    fn fit(layouts: Vec<PyLayout>, num_categories: u32, bins: usize, quantizer: &str, seed: u64) -> PyResult<Self> {
        let kind: QuantizerKind = quantizer.parse().map_err(err)?;
        let layouts: Vec<Layout> = layouts.into_iter().map(to_layout).collect();
        let (inner, _) = laydiff::Vocabulary::fit(&layouts, num_categories, bins, kind, seed).map_err(err)?;
        Ok(PyVocabulary { inner })
    }

    #[staticmethod]
    fn from_json(s: &str) -> PyResult<Self> {
        Ok(PyVocabulary {
            inner: laydiff::Vocabulary::from_json(s).map_err(err)?,
        })
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().map_err(err)
    }

    #[getter]
    fn num_categories(&self) -> u32 {
        self.inner.num_categories()
    }

    #[getter]
    fn bins(&self) -> usize {
        self.inner.bins()
    }

    #[getter]
    fn pad(&self) -> u32 {
        self.inner.pad()
    }

    #[getter]
    fn mask(&self) -> u32 {
        self.inner.mask()
    }

    fn __len__(&self) -> usize {
        self.inner.size()
    }

    fn centroids(&self, modality_name: &str) -> PyResult<Vec<f64>> {
        Ok(self.inner.centroids(modality(modality_name)?).to_vec())
    }

    fn encode(&self, value: f64, modality_name: &str) -> PyResult<u32> {
        self.inner.encode(value, modality(modality_name)?).map_err(err)
    }

    fn decode(&self, token: u32) -> PyResult<f64> {
        self.inner.decode(token).map_err(err)
    }

    fn __repr__(&self) -> String {
        format!(
            "Vocabulary(num_categories={}, bins={}, size={})",
            self.inner.num_categories(),
            self.inner.bins(),
            self.inner.size()
        )
    }
}

#[pyclass(module = "pylaydiff", name = "Schedule")]
struct PySchedule {
    inner: DiffusionSchedule,
    vocab: laydiff::Vocabulary,
}

#[pymethods]
impl PySchedule {
    #[new]
    #[pyo3(signature = (vocab, steps=100))]
    fn new(vocab: &PyVocabulary, steps: usize) -> PyResult<Self> {
        let cfg = ScheduleConfig {
            steps,
            ..ScheduleConfig::default()
        };
        Ok(PySchedule {
            inner: DiffusionSchedule::for_vocab(&cfg, &vocab.inner).map_err(err)?,
            vocab: vocab.inner.clone(),
        })
    }

    #[getter]
    fn steps(&self) -> usize {
        self.inner.steps()
    }

    /// `(alpha_bar, beta_bar, gamma_bar)` of the cumulative transition.
    fn cumulative(&self, t: usize, modality_name: &str) -> PyResult<(f64, f64, f64)> {
        if t > self.inner.steps() {
            return Err(PyValueError::new_err(format!("t={t} beyond {} steps", self.inner.steps())));
        }
        let q = self.inner.cumulative(t, modality(modality_name)?);
        Ok((q.alpha, q.beta, q.gamma))
    }

    /// `q(z_{t-1} | z_t, z_0)` over local states.
    fn posterior(&self, modality_name: &str, zt: usize, z0: usize, t: usize) -> PyResult<Vec<f64>> {
        let m = modality(modality_name)?;
        let states = self.inner.states(m);
        if t == 0 || t > self.inner.steps() || zt > states || z0 >= states {
            return Err(PyValueError::new_err("state or step out of range"));
        }
        diffusion::posterior(&self.inner, m, zt, z0, t).map_err(err)
    }

    /// Forward-corrupt a token sequence to step `t`.
    #[pyo3(signature = (tokens, t, seed=0))]
    fn corrupt(&self, tokens: Vec<u32>, t: usize, seed: u64) -> PyResult<Vec<u32>> {
        if t == 0 || t > self.inner.steps() {
            return Err(PyValueError::new_err(format!("t={t} outside 1..={}", self.inner.steps())));
        }
        let seq = TokenSeq(tokens);
        seq.check_modalities(&self.vocab).map_err(err)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(diffusion::corrupt(&seq, t, &self.inner, &self.vocab, &mut rng).map_err(err)?.0)
    }
}

#[pyclass(module = "pylaydiff", name = "Model")]
struct PyModel {
    inner: Checkpoint,
}

#[pymethods]
impl PyModel {
    /// Train a fresh model and return it with its per-step losses.
    #[staticmethod]
    #[pyo3(signature = (layouts, vocab, preset="tiny", steps=100, batch_size=64, max_elements=None, diffusion_steps=100, seed=0))]
    #[allow(clippy::too_many_arguments)]
    fn train(
        layouts: Vec<PyLayout>,
        vocab: &PyVocabulary,
        preset: &str,
        steps: usize,
        batch_size: usize,
        max_elements: Option<usize>,
        diffusion_steps: usize,
        seed: u64,
    ) -> PyResult<(Self, Vec<f64>)> {
        let layouts: Vec<Layout> = layouts.into_iter().map(to_layout).collect();
        let v = &vocab.inner;
        let mut model = DenoiserConfig::preset(preset, v.num_categories(), v.bins()).map_err(err)?;
        model.max_elements = max_elements.unwrap_or_else(|| layouts.iter().map(Layout::len).max().unwrap_or(1).max(1));
        let train = TrainConfig {
            max_steps: Some(steps),
            batch_size,
            seed,
            ..TrainConfig::default()
        };
        let schedule = ScheduleConfig {
            steps: diffusion_steps,
            ..ScheduleConfig::default()
        };
        let (inner, records) = denoiser::train(&layouts, v, model, train, schedule, |_| {}).map_err(err)?;
        Ok((PyModel { inner }, records.iter().map(|r| r.loss).collect()))
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(PyModel {
            inner: Checkpoint::load(path).map_err(err)?,
        })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.inner.save(path).map_err(err)
    }

    #[getter]
    fn vocab(&self) -> PyVocabulary {
        PyVocabulary {
            inner: self.inner.vocab.clone(),
        }
    }

    #[getter]
    fn max_elements(&self) -> usize {
        self.inner.net.config().max_elements
    }

    #[getter]
    fn num_parameters(&self) -> usize {
        self.inner.net.num_parameters()
    }

    /// Sample layouts. Conditional tasks derive one condition per sample
    /// from `source`, cycling through it.
    #[pyo3(signature = (task="uncond", n=1, seed=0, delta=1, top_p=1.0, source=None))]
    fn sample(
        &self,
        task: &str,
        n: usize,
        seed: u64,
        delta: usize,
        top_p: f64,
        source: Option<Vec<PyLayout>>,
    ) -> PyResult<Vec<PyLayout>> {
        let task: TaskKind = task.parse().map_err(err)?;
        let vocab = &self.inner.vocab;
        let max = self.inner.net.config().max_elements;
        let opts = SampleOptions {
            n,
            delta,
            top_p,
            seed,
            ..SampleOptions::default()
        };
        let schedule = self.inner.diffusion_schedule().map_err(err)?;
        let out = if task == TaskKind::Unconditional {
            let cond = TaskCondition::unconditional(vocab, max);
            sampler::sample(&self.inner.net, &schedule, vocab, &cond, &opts).map_err(err)?
        } else {
            let source: Vec<Layout> = source
                .filter(|s| !s.is_empty())
                .ok_or_else(|| PyValueError::new_err(format!("task {task} needs source layouts")))?
                .into_iter()
                .map(to_layout)
                .collect();
            let copts = ConditionOptions {
                max_elements: max,
                ..ConditionOptions::default()
            };
            let mut rng = seed::rng(seed, "condition");
            let conds = (0..n)
                .map(|i| make_condition(task, &source[i % source.len()], vocab, &copts, &mut rng))
                .collect::<laydiff::Result<Vec<_>>>()
                .map_err(err)?;
            sampler::sample_each(&self.inner.net, &schedule, vocab, &conds, &opts).map_err(err)?
        };
        Ok(out.layouts.iter().map(from_layout).collect())
    }
}

/// `(train, val, test)` splits of a grid-flow synthetic corpus.
#[pyfunction]
#[pyo3(signature = (size=5000, num_categories=5, jitter=0.0, seed=0))]
fn synthetic(size: usize, num_categories: u32, jitter: f64, seed: u64) -> PyResult<(Vec<PyLayout>, Vec<PyLayout>, Vec<PyLayout>)> {
    let spec = SyntheticSpec {
        size,
        num_categories,
        jitter,
        seed,
        category_weights: if num_categories == 5 {
            SyntheticSpec::default().category_weights
        } else {
            vec![]
        },
        ..SyntheticSpec::default()
    };
    let c = gen_synthetic(&spec, SplitRatios::default()).map_err(err)?;
    let conv = |ls: &[Layout]| ls.iter().map(from_layout).collect::<Vec<_>>();
    Ok((conv(&c.train), conv(&c.val), conv(&c.test)))
}

#[pyfunction]
#[pyo3(signature = (layout, std=0.1, seed=0))]
fn perturb(layout: PyLayout, std: f64, seed: u64) -> PyResult<PyLayout> {
    if !(std >= 0.0 && std.is_finite()) {
        return Err(PyValueError::new_err(format!("std {std} must be finite and >= 0")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(from_layout(&perturb_layout(&to_layout(layout), std, &mut rng)))
}

#[pyfunction]
fn flatten(layout: PyLayout, vocab: &PyVocabulary, max_elements: usize) -> PyResult<Vec<u32>> {
    Ok(tokens::flatten(&to_layout(layout), &vocab.inner, max_elements).map_err(err)?.0)
}

#[pyfunction]
fn unflatten(tokens: Vec<u32>, vocab: &PyVocabulary) -> PyResult<PyLayout> {
    if !tokens.len().is_multiple_of(tokens::ATTRIBUTES) {
        return Err(PyValueError::new_err("sequence length is not a multiple of 5"));
    }
    Ok(from_layout(&tokens::unflatten(&TokenSeq(tokens), &vocab.inner).map_err(err)?))
}

#[pyfunction]
fn alignment(layout: PyLayout) -> f64 {
    metrics::alignment(&to_layout(layout))
}

#[pyfunction]
fn overlap(layout: PyLayout) -> f64 {
    metrics::overlap(&to_layout(layout))
}

#[pyfunction]
fn max_iou(a: PyLayout, b: PyLayout) -> PyResult<f64> {
    metrics::max_iou_pair(&to_layout(a), &to_layout(b)).map_err(err)
}

#[pyfunction]
fn docsim(a: PyLayout, b: PyLayout) -> f64 {
    metrics::docsim(&to_layout(a), &to_layout(b))
}

#[pyfunction]
fn frechet_distance(a: Vec<Vec<f64>>, b: Vec<Vec<f64>>) -> PyResult<f64> {
    metrics::frechet_distance(&a, &b).map_err(err)
}

#[pyfunction]
#[pyo3(signature = (generated, reference, k=5))]
fn density_coverage(generated: Vec<Vec<f64>>, reference: Vec<Vec<f64>>, k: usize) -> PyResult<(f64, f64)> {
    metrics::density_coverage(&generated, &reference, k).map_err(err)
}

#[pyfunction]
#[pyo3(signature = (layout, names=vec![]))]
fn render_svg(layout: PyLayout, names: Vec<String>) -> String {
    laydiff::render::render_svg(&to_layout(layout), &names)
}

#[pymodule]
fn pylaydiff(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyVocabulary>()?;
    m.add_class::<PySchedule>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(synthetic, m)?)?;
    m.add_function(wrap_pyfunction!(perturb, m)?)?;
    m.add_function(wrap_pyfunction!(flatten, m)?)?;
    m.add_function(wrap_pyfunction!(unflatten, m)?)?;
    m.add_function(wrap_pyfunction!(alignment, m)?)?;
    m.add_function(wrap_pyfunction!(overlap, m)?)?;
    m.add_function(wrap_pyfunction!(max_iou, m)?)?;
    m.add_function(wrap_pyfunction!(docsim, m)?)?;
    m.add_function(wrap_pyfunction!(frechet_distance, m)?)?;
    m.add_function(wrap_pyfunction!(density_coverage, m)?)?;
    m.add_function(wrap_pyfunction!(render_svg, m)?)?;
    Ok(())
}
