use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use jptdp::autodiff::Adam;
use jptdp::checkpoint::{self, Checkpoint};
use jptdp::conllu::{parse_conllu, read_conllu, to_conllu_string, write_conllu, Sentence, Token};
use jptdp::eisner::{eisner_decode as decode, RootConstraint, ScoreMatrix};
use jptdp::eval::{self, EvalOptions};
use jptdp::model::{ArcLoss, Hyperparams};
use jptdp::trainer::{predict_treebank, train_on};

type Row = (String, String, Option<usize>, String);

fn to_py(e: jptdp::Error) -> PyErr {
    match e {
        jptdp::Error::Io { .. } => PyIOError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

/// A CoNLL-U treebank.
#[pyclass(module = "jptdp", skip_from_py_object)]
#[derive(Clone)]
struct Treebank {
    inner: jptdp::conllu::Treebank,
}

#[pymethods]
impl Treebank {
    #[staticmethod]
    fn read(path: &str) -> PyResult<Self> {
        Ok(Treebank {
            inner: read_conllu(path).map_err(to_py)?,
        })
    }

    #[staticmethod]
    fn parse(text: &str) -> PyResult<Self> {
        Ok(Treebank {
            inner: parse_conllu(text, "<string>").map_err(to_py)?,
        })
    }

    /// Builds unannotated sentences from lists of word forms.
    #[staticmethod]
    fn from_words(sentences: Vec<Vec<String>>) -> Self {
        let sentences = sentences
            .into_iter()
            .map(|words| {
                Sentence::from_tokens(
                    words
                        .into_iter()
                        .enumerate()
                        .map(|(i, w)| Token::new(i + 1, w))
                        .collect(),
                )
            })
            .collect();
        Treebank {
            inner: jptdp::conllu::Treebank::new(sentences),
        }
    }

    fn write(&self, path: &str) -> PyResult<()> {
        write_conllu(&self.inner, path).map_err(to_py)
    }

    fn to_conllu(&self) -> String {
        to_conllu_string(&self.inner)
    }

    fn token_count(&self) -> usize {
        self.inner.token_count()
    }

    /// Per sentence, a list of `(form, upos, head, deprel)`; `head` is `None` when unannotated.
    fn rows(&self) -> Vec<Vec<Row>> {
        self.inner
            .sentences
            .iter()
            .map(|s| {
                s.tokens
                    .iter()
                    .map(|t| (t.form.clone(), t.upos.clone(), t.head, t.deprel.clone()))
                    .collect()
            })
            .collect()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!(
            "Treebank({} sentences, {} tokens)",
            self.inner.len(),
            self.inner.token_count()
        )
    }
}

/// Attachment and tagging scores.
#[pyclass(module = "jptdp", get_all, skip_from_py_object)]
#[derive(Clone)]
struct Metrics {
    upos: f64,
    uas: f64,
    las: f64,
    mixed: f64,
    tokens: usize,
}

#[pymethods]
impl Metrics {
    fn to_dict<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let d = PyDict::new(py);
        d.set_item("upos", self.upos)?;
        d.set_item("uas", self.uas)?;
        d.set_item("las", self.las)?;
        d.set_item("mixed", self.mixed)?;
        d.set_item("tokens", self.tokens)?;
        Ok(d)
    }

    fn __repr__(&self) -> String {
        format!(
            "Metrics(upos={:.4}, uas={:.4}, las={:.4}, mixed={:.4}, tokens={})",
            self.upos, self.uas, self.las, self.mixed, self.tokens
        )
    }
}

impl From<eval::Metrics> for Metrics {
    fn from(m: eval::Metrics) -> Self {
        Metrics {
            upos: m.upos_acc,
            uas: m.uas,
            las: m.las,
            mixed: m.mixed,
            tokens: m.token_count,
        }
    }
}

/// A trained tagger-parser.
#[pyclass(module = "jptdp")]
struct Model {
    ckpt: Checkpoint,
}

#[pymethods]
impl Model {
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Model {
            ckpt: checkpoint::deserialize(path).map_err(to_py)?,
        })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        checkpoint::serialize(&self.ckpt, path).map_err(to_py)
    }

    /// A copy of `treebank` with UPOS, HEAD and DEPREL predicted.
    fn predict(&self, treebank: &Treebank) -> PyResult<Treebank> {
        Ok(Treebank {
            inner: predict_treebank(&self.ckpt.model, &treebank.inner).map_err(to_py)?,
        })
    }

    /// Tags and parses one tokenized sentence: `[(form, upos, head, deprel)]`.
    fn parse(&self, words: Vec<String>) -> PyResult<Vec<(String, String, usize, String)>> {
        let sentence = Sentence::from_tokens(
            words
                .into_iter()
                .enumerate()
                .map(|(i, w)| Token::new(i + 1, w))
                .collect(),
        );
        let out = self.ckpt.model.annotate(&sentence).map_err(to_py)?;
        Ok(out
            .tokens
            .into_iter()
            .map(|t| (t.form, t.upos, t.head.unwrap_or(0), t.deprel))
            .collect())
    }

    #[getter]
    fn best_dev_mixed(&self) -> f64 {
        self.ckpt.best_dev_mixed
    }

    #[getter]
    fn epoch_of_best(&self) -> u32 {
        self.ckpt.epoch_of_best
    }

    #[getter]
    fn use_chars(&self) -> bool {
        self.ckpt.model.hyper.use_chars
    }

    #[getter]
    fn tags(&self) -> Vec<String> {
        self.ckpt.model.vocab.tags.items().to_vec()
    }

    #[getter]
    fn relations(&self) -> Vec<String> {
        self.ckpt.model.vocab.rels.items().to_vec()
    }

    fn to_bytes(&self) -> Vec<u8> {
        self.ckpt.to_bytes()
    }

    #[staticmethod]
    fn from_bytes(data: Vec<u8>) -> PyResult<Self> {
        Ok(Model {
            ckpt: Checkpoint::from_bytes(&data).map_err(to_py)?,
        })
    }
}

/// Trains on `train`, selecting the epoch with the best mixed accuracy on `dev`.
/// `on_epoch(epoch, mean_loss, dev_metrics)` is called after every epoch.
#[pyfunction]
#[pyo3(signature = (
    train, dev, *, epochs=30, seed=1, use_chars=true, multi_root=false, global_arc_loss=false,
    char_dim=64, char_hidden=64, word_dim=128, lstm_dim=128, lstm_layers=2, mlp_hidden=100,
    word_dropout=0.25, noise_sigma=0.2, margin=1.0, learning_rate=0.001, shuffle=true, on_epoch=None
))]
#[allow(clippy::too_many_arguments)]
fn train(
    train: &Treebank,
    dev: &Treebank,
    epochs: usize,
    seed: u64,
    use_chars: bool,
    multi_root: bool,
    global_arc_loss: bool,
    char_dim: usize,
    char_hidden: usize,
    word_dim: usize,
    lstm_dim: usize,
    lstm_layers: usize,
    mlp_hidden: usize,
    word_dropout: f64,
    noise_sigma: f64,
    margin: f64,
    learning_rate: f64,
    shuffle: bool,
    on_epoch: Option<Bound<'_, PyAny>>,
) -> PyResult<Model> {
    let hyper = Hyperparams {
        char_dim,
        char_hidden,
        word_dim,
        ctx_state_dim: lstm_dim,
        ctx_layers: lstm_layers,
        mlp_hidden,
        word_dropout_alpha: word_dropout,
        noise_sigma,
        margin,
        epochs,
        seed,
        use_chars,
        multi_root,
        arc_loss: if global_arc_loss {
            ArcLoss::Global
        } else {
            ArcLoss::PerPosition
        },
        adam: Adam {
            lr: learning_rate,
            ..Adam::default()
        },
    };
    let mut callback_error = None;
    let outcome = train_on(&train.inner, &dev.inner, &hyper, shuffle, |r| {
        if let (Some(cb), None) = (&on_epoch, &callback_error) {
            if let Err(e) = cb.call1((r.epoch, r.mean_loss, Metrics::from(r.dev.clone()))) {
                callback_error = Some(e);
            }
        }
    })
    .map_err(to_py)?;
    if let Some(e) = callback_error {
        return Err(e);
    }
    Ok(Model {
        ckpt: outcome.checkpoint,
    })
}

#[pyfunction]
#[pyo3(signature = (gold, pred, include_punct=true, strip_subtypes=false))]
fn evaluate(gold: &Treebank, pred: &Treebank, include_punct: bool, strip_subtypes: bool) -> PyResult<Metrics> {
    let opts = EvalOptions {
        include_punct,
        strip_subtypes,
    };
    eval::evaluate(&gold.inner, &pred.inner, opts)
        .map(Metrics::from)
        .map_err(to_py)
}

#[pyfunction]
fn oov_rate(train: &Treebank, test: &Treebank) -> PyResult<f64> {
    eval::oov_rate(&train.inner, &test.inner).map_err(to_py)
}

/// Best projective tree for an `(n+1) x (n+1)` score matrix indexed `[head][modifier]`.
/// Returns the head of each token 1..n.
#[pyfunction]
#[pyo3(signature = (scores, multi_root=false))]
fn eisner_decode(scores: Vec<Vec<f64>>, multi_root: bool) -> PyResult<Vec<usize>> {
    let matrix = ScoreMatrix::from_rows(&scores).map_err(to_py)?;
    let mode = if multi_root {
        RootConstraint::Multi
    } else {
        RootConstraint::Single
    };
    Ok(decode(&matrix, mode).map_err(to_py)?.heads)
}

#[pymodule]
#[pyo3(name = "jptdp")]
fn jptdp_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Treebank>()?;
    m.add_class::<Metrics>()?;
    m.add_class::<Model>()?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(oov_rate, m)?)?;
    m.add_function(wrap_pyfunction!(eisner_decode, m)?)?;
    Ok(())
}
