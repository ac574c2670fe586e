//! The joint tagger-parser: shared BiLSTM features feeding a tagging head,
//! an arc scorer and a relation scorer.

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Adam, Graph, ParamStore, Tensor, Var};
use crate::conllu::{Sentence, EMPTY};
use crate::eisner::{eisner_decode, loss_augment, ParseTree, RootConstraint, ScoreMatrix};
use crate::error::{Error, Result};
use crate::layers::{
    bilstm_final, bilstm_transduce, word_dropout_lookup, BiLstmLayer, EmbeddingTable, Linear, MlpParams, Vocab,
    ROOT_FORM, ROOT_WORD,
};

/// RNG driving initialization, shuffling, dropout and noise.
pub type ModelRng = ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> ModelRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// How the structured arc hinge is assembled from the decoded tree.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ArcLoss {
    /// Sum over mis-attached tokens of `score(predicted head) - score(gold head)`.
    PerPosition,
    /// `max(0, augmented score of the prediction - score of gold)`.
    Global,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub char_dim: usize,
    pub char_hidden: usize,
    pub word_dim: usize,
    pub ctx_state_dim: usize,
    pub ctx_layers: usize,
    pub mlp_hidden: usize,
    pub word_dropout_alpha: f64,
    pub noise_sigma: f64,
    pub margin: f64,
    pub epochs: usize,
    pub seed: u64,
    pub use_chars: bool,
    pub multi_root: bool,
    pub arc_loss: ArcLoss,
    pub adam: Adam,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            char_dim: 64,
            char_hidden: 64,
            word_dim: 128,
            ctx_state_dim: 128,
            ctx_layers: 2,
            mlp_hidden: 100,
            word_dropout_alpha: 0.25,
            noise_sigma: 0.2,
            margin: 1.0,
            epochs: 30,
            seed: 1,
            use_chars: true,
            multi_root: false,
            arc_loss: ArcLoss::PerPosition,
            adam: Adam::default(),
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("char_dim", self.char_dim),
            ("char_hidden", self.char_hidden),
            ("word_dim", self.word_dim),
            ("ctx_state_dim", self.ctx_state_dim),
            ("ctx_layers", self.ctx_layers),
            ("mlp_hidden", self.mlp_hidden),
            ("epochs", self.epochs),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if self.word_dropout_alpha < 0.0 || self.noise_sigma < 0.0 || self.margin < 0.0 {
            return Err(Error::Config("dropout, noise and margin must be non-negative".into()));
        }
        if self.adam.lr <= 0.0 {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        Ok(())
    }

    pub fn root_constraint(&self) -> RootConstraint {
        if self.multi_root {
            RootConstraint::Multi
        } else {
            RootConstraint::Single
        }
    }

    /// Width of the per-token input vector `e_i`.
    pub fn input_dim(&self) -> usize {
        self.word_dim + if self.use_chars { 2 * self.char_hidden } else { 0 }
    }

    /// Width of the shared feature vector `v_i`.
    pub fn feature_dim(&self) -> usize {
        2 * self.ctx_state_dim
    }
}

/// Character channel: embeddings plus the word-level character BiLSTM.
#[derive(Clone, Copy, Debug)]
pub struct CharEncoder {
    pub table: EmbeddingTable,
    pub bilstm: BiLstmLayer,
}

/// Every learned tensor of the model, with the structure that addresses them.
#[derive(Clone, Debug)]
pub struct ModelParams {
    pub hyper: Hyperparams,
    pub vocab: Vocab,
    pub store: ParamStore,
    pub word_table: EmbeddingTable,
    pub chars: Option<CharEncoder>,
    pub ctx: Vec<BiLstmLayer>,
    pub tagger: Linear,
    pub mlp_arc: MlpParams,
    pub mlp_rel: MlpParams,
}

/// Shared features `v_0..v_n`, with `v_0` the ROOT position.
#[derive(Clone, Debug)]
pub struct Features {
    pub v: Vec<Var>,
}

impl Features {
    /// Number of real tokens.
    pub fn n(&self) -> usize {
        self.v.len() - 1
    }
}

/// Arc scores with the graph nodes that produced them.
#[derive(Clone, Debug)]
pub struct ArcScores {
    pub matrix: ScoreMatrix,
    nodes: Vec<Option<Var>>,
}

impl ArcScores {
    pub fn node(&self, head: usize, modifier: usize) -> Var {
        let n = self.matrix.n();
        self.nodes[head * (n + 1) + modifier].expect("arc node exists for h != m, m >= 1")
    }
}

/// Per-sentence gold annotation as vocabulary ids.
#[derive(Clone, Debug)]
pub struct GoldAnnotation {
    pub tags: Vec<usize>,
    pub tree: ParseTree,
    pub rels: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct JointPrediction {
    pub tags: Vec<usize>,
    /// Heads plus relation ids in `labels`.
    pub tree: ParseTree,
}

/// The summed objective and its three components' values.
#[derive(Clone, Copy, Debug)]
pub struct JointLoss {
    pub total: Var,
    pub pos: f64,
    pub arc: f64,
    pub rel: f64,
}

fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

impl ModelParams {
    pub fn new(hyper: Hyperparams, vocab: Vocab, rng: &mut ModelRng) -> Result<Self> {
        hyper.validate()?;
        if vocab.tags.is_empty() || vocab.rels.is_empty() {
            return Err(Error::Config("vocabulary has no tags or relations".into()));
        }
        let mut store = ParamStore::new();
        let word_table = EmbeddingTable::new(&mut store, "word_table", vocab.words.len(), hyper.word_dim, rng);
        let chars = if hyper.use_chars {
            let table = EmbeddingTable::new(&mut store, "char_table", vocab.chars.len(), hyper.char_dim, rng);
            let bilstm = BiLstmLayer::new(&mut store, "char_bilstm", hyper.char_dim, hyper.char_hidden, rng);
            Some(CharEncoder { table, bilstm })
        } else {
            None
        };
        let mut ctx = Vec::with_capacity(hyper.ctx_layers);
        let mut in_dim = hyper.input_dim();
        for layer in 0..hyper.ctx_layers {
            let l = BiLstmLayer::new(
                &mut store,
                &format!("ctx_bilstm.{layer}"),
                in_dim,
                hyper.ctx_state_dim,
                rng,
            );
            in_dim = l.output_dim();
            ctx.push(l);
        }
        let feat = hyper.feature_dim();
        let tagger = Linear::new(&mut store, "tagger", feat, vocab.tags.len(), rng);
        let mlp_arc = MlpParams::new(&mut store, "mlp_arc", 2 * feat, hyper.mlp_hidden, 1, rng);
        let mlp_rel = MlpParams::new(&mut store, "mlp_rel", 2 * feat, hyper.mlp_hidden, vocab.rels.len(), rng);
        Ok(ModelParams {
            hyper,
            vocab,
            store,
            word_table,
            chars,
            ctx,
            tagger,
            mlp_arc,
            mlp_rel,
        })
    }

    /// Converts a sentence's gold columns to ids.
    pub fn gold(&self, sentence: &Sentence) -> Result<GoldAnnotation> {
        let mut tags = Vec::with_capacity(sentence.len());
        let mut rels = Vec::with_capacity(sentence.len());
        let mut heads = Vec::with_capacity(sentence.len());
        for t in &sentence.tokens {
            tags.push(
                self.vocab
                    .tags
                    .id(&t.upos)
                    .ok_or_else(|| Error::Data(format!("unknown UPOS tag '{}'", t.upos)))?,
            );
            rels.push(
                self.vocab
                    .rels
                    .id(&t.deprel)
                    .ok_or_else(|| Error::Data(format!("unknown relation '{}'", t.deprel)))?,
            );
            heads.push(
                t.head
                    .ok_or_else(|| Error::Data(format!("token {} has no gold head", t.id)))?,
            );
        }
        Ok(GoldAnnotation {
            tags,
            tree: ParseTree::new(heads),
            rels,
        })
    }

    /// Builds `v_0..v_n`. Passing an RNG selects training mode (word dropout
    /// and Gaussian noise on each input vector); `None` is deterministic inference.
    pub fn encode(&self, g: &mut Graph, sentence: &Sentence, mut rng: Option<&mut ModelRng>) -> Result<Features> {
        if sentence.is_empty() {
            return Err(Error::Contract("cannot encode an empty sentence".into()));
        }
        let training = rng.is_some();
        let mut char_cache: HashMap<&str, Var> = HashMap::new();
        let mut inputs = Vec::with_capacity(sentence.len() + 1);
        let forms = std::iter::once(ROOT_FORM).chain(sentence.forms());
        for (i, form) in forms.enumerate() {
            let word = if i == 0 {
                self.word_table.lookup(g, ROOT_WORD)?
            } else {
                match rng.as_deref_mut() {
                    Some(r) => word_dropout_lookup(
                        g,
                        &self.word_table,
                        &self.vocab,
                        form,
                        true,
                        self.hyper.word_dropout_alpha,
                        r,
                    )?,
                    None => self.word_table.lookup(g, self.vocab.word_id(form))?,
                }
            };
            let e = match &self.chars {
                Some(enc) => {
                    let cv = match char_cache.get(form) {
                        Some(&v) => v,
                        None => {
                            let ids = self.vocab.char_ids(form);
                            let ids = if ids.is_empty() {
                                vec![crate::layers::UNK_CHAR]
                            } else {
                                ids
                            };
                            let embs = ids
                                .iter()
                                .map(|&c| enc.table.lookup(g, c))
                                .collect::<Result<Vec<_>>>()?;
                            let v = bilstm_final(g, &enc.bilstm, &embs)?;
                            char_cache.insert(form, v);
                            v
                        }
                    };
                    g.concat(&[word, cv])?
                }
                None => word,
            };
            let e = match rng.as_deref_mut() {
                Some(r) => g.gaussian_noise(e, self.hyper.noise_sigma, training, r)?,
                None => e,
            };
            inputs.push(e);
        }
        let v = bilstm_transduce(g, &self.ctx, &inputs)?;
        Ok(Features { v })
    }

    pub fn tag_logits(&self, g: &mut Graph, feats: &Features, position: usize) -> Result<Var> {
        self.tagger.apply(g, feats.v[position])
    }

    /// Cross-entropy of the gold tags over tokens 1..n.
    pub fn tagging_loss(&self, g: &mut Graph, feats: &Features, gold_tags: &[usize]) -> Result<Var> {
        if gold_tags.len() != feats.n() {
            return Err(Error::Contract("gold tag count differs from sentence length".into()));
        }
        let mut terms = Vec::with_capacity(gold_tags.len());
        for (i, &tag) in gold_tags.iter().enumerate() {
            if tag >= self.vocab.tags.len() {
                return Err(Error::Data(format!("unknown tag id {tag}")));
            }
            let logits = self.tag_logits(g, feats, i + 1)?;
            terms.push(g.neg_log_softmax(logits, tag)?);
        }
        g.sum(&terms)
    }

    /// First-layer pre-activations of an MLP applied to `[v_h; v_m]`, split into
    /// the head half `W1[:, :d] v_h` and modifier half `W1[:, d:] v_m + b1`.
    fn pair_halves(&self, g: &mut Graph, mlp: &MlpParams, feats: &Features) -> Result<(Vec<Var>, Vec<Var>)> {
        let d = self.hyper.feature_dim();
        let w1 = g.param(mlp.w1);
        let b1 = g.param(mlp.b1);
        let mut heads = Vec::with_capacity(feats.v.len());
        let mut mods = Vec::with_capacity(feats.v.len());
        for &v in &feats.v {
            heads.push(g.matvec_block(w1, v, 0)?);
            let m = g.matvec_block(w1, v, d)?;
            mods.push(g.add(m, b1)?);
        }
        Ok((heads, mods))
    }

    fn pair_output(&self, g: &mut Graph, mlp: &MlpParams, head_half: Var, mod_half: Var) -> Result<Var> {
        let z = g.add(head_half, mod_half)?;
        let h = g.tanh(z);
        mlp.output(g, h)
    }

    /// `MLP_arc([v_h; v_m])` for every head 0..n and modifier 1..n.
    pub fn score_all_arcs(&self, g: &mut Graph, feats: &Features) -> Result<ArcScores> {
        let n = feats.n();
        let (heads, mods) = self.pair_halves(g, &self.mlp_arc, feats)?;
        let mut matrix = ScoreMatrix::zeros(n);
        let mut nodes = vec![None; (n + 1) * (n + 1)];
        for h in 0..=n {
            for m in 1..=n {
                if h == m {
                    continue;
                }
                let s = self.pair_output(g, &self.mlp_arc, heads[h], mods[m])?;
                matrix.set(h, m, g.scalar(s));
                nodes[h * (n + 1) + m] = Some(s);
            }
        }
        Ok(ArcScores { matrix, nodes })
    }

    /// Structured hinge over arcs with loss-augmented decoding.
    ///
    /// Returns the loss node and the tree found by the augmented decode. When
    /// that tree equals gold the loss is a constant zero.
    pub fn arc_loss(&self, g: &mut Graph, scores: &ArcScores, gold: &ParseTree) -> Result<(Var, ParseTree)> {
        let augmented = loss_augment(&scores.matrix, gold, self.hyper.margin)?;
        let pred = eisner_decode(&augmented, self.hyper.root_constraint())?;
        self.arc_loss_for(g, scores, gold, &pred).map(|l| (l, pred))
    }

    /// Arc hinge for a fixed augmented-decode result.
    pub fn arc_loss_for(&self, g: &mut Graph, scores: &ArcScores, gold: &ParseTree, pred: &ParseTree) -> Result<Var> {
        let mut diffs = Vec::new();
        for m in 1..=gold.len() {
            let (p, t) = (pred.head_of(m), gold.head_of(m));
            if p != t {
                diffs.push(g.sub(scores.node(p, m), scores.node(t, m))?);
            }
        }
        if diffs.is_empty() {
            return Ok(g.constant_scalar(0.0));
        }
        let total = g.sum(&diffs)?;
        match self.hyper.arc_loss {
            ArcLoss::PerPosition => Ok(total),
            ArcLoss::Global => {
                let shifted = g.shift(total, &[self.hyper.margin * diffs.len() as f64])?;
                Ok(g.max_scalar(shifted, 0.0))
            }
        }
    }

    /// Relation scores `MLP_rel([v_h; v_m])` for the given arcs, computed
    /// with shared first-layer halves.
    pub fn relation_scores(&self, g: &mut Graph, feats: &Features, arcs: &[(usize, usize)]) -> Result<Vec<Var>> {
        let (heads, mods) = self.pair_halves(g, &self.mlp_rel, feats)?;
        arcs.iter()
            .map(|&(h, m)| self.pair_output(g, &self.mlp_rel, heads[h], mods[m]))
            .collect()
    }

    /// Multi-class hinge on relation labels along the gold arcs.
    pub fn rel_loss(&self, g: &mut Graph, feats: &Features, gold: &ParseTree, gold_rels: &[usize]) -> Result<Var> {
        let nrel = self.vocab.rels.len();
        if let Some(bad) = gold_rels.iter().find(|&&r| r >= nrel) {
            return Err(Error::Data(format!("unknown relation id {bad}")));
        }
        let arcs: Vec<(usize, usize)> = (1..=gold.len()).map(|m| (gold.head_of(m), m)).collect();
        let outputs = self.relation_scores(g, feats, &arcs)?;
        let mut terms = Vec::with_capacity(arcs.len());
        for (u, &r) in outputs.into_iter().zip(gold_rels) {
            let values = g.value(u);
            let rival = (0..nrel)
                .filter(|&k| k != r)
                .fold(None, |best: Option<usize>, k| match best {
                    Some(b) if values[b] >= values[k] => Some(b),
                    _ => Some(k),
                });
            let Some(rival) = rival else { continue };
            let wrong = g.pick(u, rival)?;
            let right = g.pick(u, r)?;
            let diff = g.sub(wrong, right)?;
            let shifted = g.shift(diff, &[self.hyper.margin])?;
            terms.push(g.max_scalar(shifted, 0.0));
        }
        if terms.is_empty() {
            return Ok(g.constant_scalar(0.0));
        }
        g.sum(&terms)
    }

    /// `L_POS + L_arc + L_rel` over one shared encoding of the sentence.
    pub fn joint_loss(&self, g: &mut Graph, sentence: &Sentence, rng: Option<&mut ModelRng>) -> Result<JointLoss> {
        let gold = self.gold(sentence)?;
        let feats = self.encode(g, sentence, rng)?;
        let pos = self.tagging_loss(g, &feats, &gold.tags)?;
        let scores = self.score_all_arcs(g, &feats)?;
        let (arc, _) = self.arc_loss(g, &scores, &gold.tree)?;
        let rel = self.rel_loss(g, &feats, &gold.tree, &gold.rels)?;
        let total = g.sum(&[pos, arc, rel])?;
        Ok(JointLoss {
            total,
            pos: g.scalar(pos),
            arc: g.scalar(arc),
            rel: g.scalar(rel),
        })
    }

    /// Tags and a labeled projective tree, without noise or dropout.
    pub fn predict(&self, sentence: &Sentence) -> Result<JointPrediction> {
        let mut g = Graph::new(&self.store);
        let feats = self.encode(&mut g, sentence, None)?;
        let n = feats.n();
        let mut tags = Vec::with_capacity(n);
        for i in 1..=n {
            let logits = self.tag_logits(&mut g, &feats, i)?;
            tags.push(argmax(g.value(logits)));
        }
        let scores = self.score_all_arcs(&mut g, &feats)?;
        let mut tree = eisner_decode(&scores.matrix, self.hyper.root_constraint())?;
        let arcs: Vec<(usize, usize)> = (1..=n).map(|m| (tree.head_of(m), m)).collect();
        let rel_nodes = self.relation_scores(&mut g, &feats, &arcs)?;
        tree.labels = Some(rel_nodes.iter().map(|&u| argmax(g.value(u))).collect());
        Ok(JointPrediction { tags, tree })
    }

    /// Copy of `sentence` with UPOS, HEAD and DEPREL replaced by predictions.
    pub fn annotate(&self, sentence: &Sentence) -> Result<Sentence> {
        let pred = self.predict(sentence)?;
        let mut out = sentence.clone();
        let labels = pred.tree.labels.as_deref().unwrap_or(&[]);
        for (i, tok) in out.tokens.iter_mut().enumerate() {
            tok.upos = self.vocab.tags.item(pred.tags[i]).to_string();
            tok.head = Some(pred.tree.heads[i]);
            tok.deprel = labels
                .get(i)
                .map(|&r| self.vocab.rels.item(r).to_string())
                .unwrap_or_else(|| EMPTY.to_string());
        }
        Ok(out)
    }

    /// Sets a named tensor's values, checking the shape.
    pub fn load_tensor(&mut self, name: &str, value: Tensor) -> Result<()> {
        let id = self
            .store
            .find(name)
            .ok_or_else(|| Error::Integrity(format!("unexpected tensor '{name}'")))?;
        let p = self.store.get_mut(id);
        if p.value.shape() != value.shape() {
            return Err(Error::Integrity(format!(
                "tensor '{name}' has shape {:?}, expected {:?}",
                value.shape(),
                p.value.shape()
            )));
        }
        p.value = value;
        Ok(())
    }
}
