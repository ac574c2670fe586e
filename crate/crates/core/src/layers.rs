//! Vocabularies, embedding tables, LSTMs and MLPs built on the autodiff graph.

use std::collections::HashMap;

use rand::Rng;

use crate::autodiff::{Graph, ParamId, ParamStore, Tensor, Var};
use crate::conllu::Treebank;
use crate::error::{Error, Result};

pub const UNK_WORD: usize = 0;
pub const ROOT_WORD: usize = 1;
pub const UNK_CHAR: usize = 0;

/// Surface form used for the artificial ROOT token's character channel.
pub const ROOT_FORM: &str = "*root*";

/// Dense string ↔ id mapping that keeps insertion order.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Lexicon {
    items: Vec<String>,
    ids: HashMap<String, usize>,
}

impl Lexicon {
    pub fn from_items(items: Vec<String>) -> Result<Self> {
        let mut lex = Lexicon::default();
        for item in items {
            if lex.ids.contains_key(&item) {
                return Err(Error::Data(format!("duplicate vocabulary entry '{item}'")));
            }
            lex.insert(&item);
        }
        Ok(lex)
    }

    pub fn insert(&mut self, item: &str) -> usize {
        if let Some(&id) = self.ids.get(item) {
            return id;
        }
        let id = self.items.len();
        self.items.push(item.to_string());
        self.ids.insert(item.to_string(), id);
        id
    }

    pub fn id(&self, item: &str) -> Option<usize> {
        self.ids.get(item).copied()
    }

    pub fn item(&self, id: usize) -> &str {
        &self.items[id]
    }

    pub fn items(&self) -> &[String] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

/// Index sets for words, characters, UPOS tags and relations.
///
/// Word ids 0 and 1 are reserved for the unknown word and ROOT; char id 0 is
/// the unknown character. Words are lowercased; characters are not.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    pub words: Lexicon,
    pub chars: Lexicon,
    pub tags: Lexicon,
    pub rels: Lexicon,
    /// Training frequency per word id; 0 for the reserved ids.
    pub word_freq: Vec<u64>,
}

const UNK_WORD_KEY: &str = "<unk>";
const ROOT_WORD_KEY: &str = "<root>";
const UNK_CHAR_KEY: &str = "<unk-char>";

pub fn normalize_word(form: &str) -> String {
    form.to_lowercase()
}

impl Vocab {
    pub fn build(treebank: &Treebank) -> Result<Self> {
        if treebank.token_count() == 0 {
            return Err(Error::Config("cannot build a vocabulary from an empty treebank".into()));
        }
        let mut words = Lexicon::default();
        words.insert(UNK_WORD_KEY);
        words.insert(ROOT_WORD_KEY);
        let mut word_freq = vec![0u64, 0u64];
        let mut chars = Lexicon::default();
        chars.insert(UNK_CHAR_KEY);
        for c in ROOT_FORM.chars() {
            chars.insert(&c.to_string());
        }
        let mut tags = Lexicon::default();
        let mut rels = Lexicon::default();
        for sent in &treebank.sentences {
            for tok in &sent.tokens {
                let id = words.insert(&normalize_word(&tok.form));
                if id == word_freq.len() {
                    word_freq.push(0);
                }
                word_freq[id] += 1;
                for c in tok.form.chars() {
                    chars.insert(&c.to_string());
                }
                if tok.upos == crate::conllu::EMPTY || tok.deprel == crate::conllu::EMPTY {
                    return Err(Error::Data(format!(
                        "training token '{}' lacks a UPOS tag or relation",
                        tok.form
                    )));
                }
                tags.insert(&tok.upos);
                rels.insert(&tok.deprel);
            }
        }
        Ok(Vocab {
            words,
            chars,
            tags,
            rels,
            word_freq,
        })
    }

    /// Word id of a surface form, falling back to the unknown word.
    pub fn word_id(&self, form: &str) -> usize {
        self.words.id(&normalize_word(form)).unwrap_or(UNK_WORD)
    }

    pub fn char_ids(&self, form: &str) -> Vec<usize> {
        form.chars()
            .map(|c| self.chars.id(c.encode_utf8(&mut [0; 4])).unwrap_or(UNK_CHAR))
            .collect()
    }

    pub fn freq(&self, word_id: usize) -> u64 {
        self.word_freq.get(word_id).copied().unwrap_or(0)
    }
}

/// Uniform initialization in ±sqrt(6 / (fan_in + fan_out)).
pub fn glorot<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> Tensor {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.random_range(-bound..bound)).collect();
    Tensor::matrix(rows, cols, data).expect("positive dimensions")
}

#[derive(Clone, Copy, Debug)]
pub struct EmbeddingTable {
    pub param: ParamId,
    pub dim: usize,
}

impl EmbeddingTable {
    /// Rows are initialized independently with Glorot bounds over `(1, dim)`.
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, size: usize, dim: usize, rng: &mut R) -> Self {
        let bound = (6.0 / (1 + dim) as f64).sqrt();
        let data = (0..size * dim).map(|_| rng.random_range(-bound..bound)).collect();
        let value = Tensor::matrix(size, dim, data).expect("positive dimensions");
        EmbeddingTable {
            param: store.add_table(name, value),
            dim,
        }
    }

    pub fn lookup(&self, graph: &mut Graph, id: usize) -> Result<Var> {
        graph.pick_row(self.param, id)
    }
}

/// Probability of replacing a word with the unknown-word row during training.
pub fn word_dropout_probability(alpha: f64, freq: u64) -> f64 {
    if alpha <= 0.0 {
        0.0
    } else {
        alpha / (alpha + freq as f64)
    }
}

/// Word-embedding lookup with frequency-based word dropout.
///
/// Unknown forms always map to the unknown-word row. In training mode a known
/// word is dropped with probability `alpha / (alpha + freq)`; inference never drops.
pub fn word_dropout_lookup<R: Rng + ?Sized>(
    graph: &mut Graph,
    table: &EmbeddingTable,
    vocab: &Vocab,
    word: &str,
    training: bool,
    alpha: f64,
    rng: &mut R,
) -> Result<Var> {
    let id = vocab.word_id(word);
    let id = if training && id != UNK_WORD && id != ROOT_WORD {
        let p = word_dropout_probability(alpha, vocab.freq(id));
        if p > 0.0 && rng.random::<f64>() < p {
            UNK_WORD
        } else {
            id
        }
    } else {
        id
    };
    table.lookup(graph, id)
}

/// Standard LSTM without peepholes. Gate rows are stacked as
/// input, forget, output, candidate.
#[derive(Clone, Copy, Debug)]
pub struct LstmParams {
    pub input_weights: ParamId,
    pub recurrent_weights: ParamId,
    pub bias: ParamId,
    pub input_dim: usize,
    pub hidden_dim: usize,
}

impl LstmParams {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        input_dim: usize,
        hidden_dim: usize,
        rng: &mut R,
    ) -> Self {
        let gates = 4 * hidden_dim;
        LstmParams {
            input_weights: store.add(format!("{name}.wx"), glorot(rng, gates, input_dim)),
            recurrent_weights: store.add(format!("{name}.wh"), glorot(rng, gates, hidden_dim)),
            bias: store.add(format!("{name}.b"), Tensor::zeros(&[gates])),
            input_dim,
            hidden_dim,
        }
    }

    pub fn initial_state(&self, graph: &mut Graph) -> (Var, Var) {
        let h = graph.input(Tensor::zeros(&[self.hidden_dim]));
        let c = graph.input(Tensor::zeros(&[self.hidden_dim]));
        (h, c)
    }
}

pub fn lstm_step(graph: &mut Graph, p: &LstmParams, x: Var, h_prev: Var, c_prev: Var) -> Result<(Var, Var)> {
    let hd = p.hidden_dim;
    if graph.dim(x) != p.input_dim || graph.dim(h_prev) != hd || graph.dim(c_prev) != hd {
        return Err(Error::Dimension {
            op: "lstm_step",
            left: vec![p.input_dim, hd],
            right: vec![graph.dim(x), graph.dim(h_prev)],
        });
    }
    let wx = graph.param(p.input_weights);
    let wh = graph.param(p.recurrent_weights);
    let b = graph.param(p.bias);
    let zx = graph.matvec(wx, x)?;
    let zh = graph.matvec(wh, h_prev)?;
    let z = graph.sum(&[zx, zh, b])?;
    let zi = graph.slice(z, 0, hd)?;
    let zf = graph.slice(z, hd, hd)?;
    let zo = graph.slice(z, 2 * hd, hd)?;
    let zg = graph.slice(z, 3 * hd, hd)?;
    let i = graph.logistic(zi);
    let f = graph.logistic(zf);
    let o = graph.logistic(zo);
    let g = graph.tanh(zg);
    let keep = graph.mul(f, c_prev)?;
    let write = graph.mul(i, g)?;
    let c = graph.add(keep, write)?;
    let tc = graph.tanh(c);
    let h = graph.mul(o, tc)?;
    Ok((h, c))
}

/// Runs an LSTM over `inputs` from a zero state, returning every hidden state
/// in input order.
fn run_lstm(graph: &mut Graph, p: &LstmParams, inputs: &[Var], reverse: bool) -> Result<Vec<Var>> {
    let (mut h, mut c) = p.initial_state(graph);
    let mut out = vec![h; inputs.len()];
    let order: Box<dyn Iterator<Item = usize>> = if reverse {
        Box::new((0..inputs.len()).rev())
    } else {
        Box::new(0..inputs.len())
    };
    for i in order {
        (h, c) = lstm_step(graph, p, inputs[i], h, c)?;
        out[i] = h;
    }
    Ok(out)
}

/// One forward/backward LSTM pair.
#[derive(Clone, Copy, Debug)]
pub struct BiLstmLayer {
    pub fwd: LstmParams,
    pub bwd: LstmParams,
}

impl BiLstmLayer {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        input_dim: usize,
        hidden_dim: usize,
        rng: &mut R,
    ) -> Self {
        BiLstmLayer {
            fwd: LstmParams::new(store, &format!("{name}.fwd"), input_dim, hidden_dim, rng),
            bwd: LstmParams::new(store, &format!("{name}.bwd"), input_dim, hidden_dim, rng),
        }
    }

    pub fn output_dim(&self) -> usize {
        self.fwd.hidden_dim + self.bwd.hidden_dim
    }
}

/// Stacked BiLSTM: each position's output is `[h_fwd; h_bwd]` of the top layer.
pub fn bilstm_transduce(graph: &mut Graph, layers: &[BiLstmLayer], inputs: &[Var]) -> Result<Vec<Var>> {
    if inputs.is_empty() {
        return Err(Error::Contract("bilstm_transduce over an empty sequence".into()));
    }
    let mut seq = inputs.to_vec();
    for layer in layers {
        let fwd = run_lstm(graph, &layer.fwd, &seq, false)?;
        let bwd = run_lstm(graph, &layer.bwd, &seq, true)?;
        seq = fwd
            .into_iter()
            .zip(bwd)
            .map(|(f, b)| graph.concat(&[f, b]))
            .collect::<Result<_>>()?;
    }
    Ok(seq)
}

/// Concatenation of the final forward and final backward hidden states.
pub fn bilstm_final(graph: &mut Graph, layer: &BiLstmLayer, inputs: &[Var]) -> Result<Var> {
    if inputs.is_empty() {
        return Err(Error::Contract("bilstm_final over an empty sequence".into()));
    }
    let fwd = run_lstm(graph, &layer.fwd, inputs, false)?;
    let bwd = run_lstm(graph, &layer.bwd, inputs, true)?;
    graph.concat(&[fwd[inputs.len() - 1], bwd[0]])
}

/// Multi-layer perceptron with exactly one tanh hidden layer.
#[derive(Clone, Copy, Debug)]
pub struct MlpParams {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
    pub in_dim: usize,
    pub hidden: usize,
    pub out_dim: usize,
}

impl MlpParams {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        hidden: usize,
        out_dim: usize,
        rng: &mut R,
    ) -> Self {
        MlpParams {
            w1: store.add(format!("{name}.w1"), glorot(rng, hidden, in_dim)),
            b1: store.add(format!("{name}.b1"), Tensor::zeros(&[hidden])),
            w2: store.add(format!("{name}.w2"), glorot(rng, out_dim, hidden)),
            b2: store.add(format!("{name}.b2"), Tensor::zeros(&[out_dim])),
            in_dim,
            hidden,
            out_dim,
        }
    }

    /// `W2 · hidden + b2` for an already computed hidden activation.
    pub fn output(&self, graph: &mut Graph, hidden: Var) -> Result<Var> {
        let w2 = graph.param(self.w2);
        let b2 = graph.param(self.b2);
        let y = graph.matvec(w2, hidden)?;
        graph.add(y, b2)
    }
}

/// `W2 · tanh(W1 · x + b1) + b2`.
pub fn mlp_apply(graph: &mut Graph, p: &MlpParams, x: Var) -> Result<Var> {
    if graph.dim(x) != p.in_dim {
        return Err(Error::Dimension {
            op: "mlp_apply",
            left: vec![p.in_dim],
            right: vec![graph.dim(x)],
        });
    }
    let w1 = graph.param(p.w1);
    let b1 = graph.param(p.b1);
    let z = graph.matvec(w1, x)?;
    let z = graph.add(z, b1)?;
    let h = graph.tanh(z);
    p.output(graph, h)
}

/// Affine map `W · x + b`.
#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        rng: &mut R,
    ) -> Self {
        Linear {
            w: store.add(format!("{name}.w"), glorot(rng, out_dim, in_dim)),
            b: store.add(format!("{name}.b"), Tensor::zeros(&[out_dim])),
            in_dim,
            out_dim,
        }
    }

    pub fn apply(&self, graph: &mut Graph, x: Var) -> Result<Var> {
        let w = graph.param(self.w);
        let b = graph.param(self.b);
        let y = graph.matvec(w, x)?;
        graph.add(y, b)
    }
}
