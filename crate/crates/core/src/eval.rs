//! Tagging and attachment scores between a gold and a predicted treebank.

use std::collections::HashSet;

use serde::Serialize;

use crate::conllu::{Token, Treebank};
use crate::error::{Error, Result};
use crate::layers::normalize_word;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EvalOptions {
    /// Count tokens whose gold UPOS is `PUNCT`.
    pub include_punct: bool,
    /// Compare relations only up to the first `:` (`nmod:poss` → `nmod`).
    pub strip_subtypes: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            include_punct: true,
            strip_subtypes: false,
        }
    }
}

/// Raw match counts; the scores are ratios of these.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct Counts {
    pub tokens: usize,
    pub upos: usize,
    pub heads: usize,
    pub labeled: usize,
    pub mixed: usize,
}

impl Counts {
    fn add(&mut self, other: &Counts) {
        self.tokens += other.tokens;
        self.upos += other.upos;
        self.heads += other.heads;
        self.labeled += other.labeled;
        self.mixed += other.mixed;
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Metrics {
    pub upos_acc: f64,
    pub uas: f64,
    pub las: f64,
    pub mixed: f64,
    pub token_count: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub per_sentence: Option<Vec<Counts>>,
}

impl Metrics {
    pub fn from_counts(c: &Counts) -> Self {
        let ratio = |k: usize| if c.tokens == 0 { 0.0 } else { k as f64 / c.tokens as f64 };
        Metrics {
            upos_acc: ratio(c.upos),
            uas: ratio(c.heads),
            las: ratio(c.labeled),
            mixed: ratio(c.mixed),
            token_count: c.tokens,
            per_sentence: None,
        }
    }

    /// `key=value` lines with the keys upos, uas, las, mixed, tokens.
    pub fn to_key_value(&self) -> String {
        format!(
            "upos={:.4}\nuas={:.4}\nlas={:.4}\nmixed={:.4}\ntokens={}\n",
            self.upos_acc, self.uas, self.las, self.mixed, self.token_count
        )
    }

    /// JSON object with the same five keys.
    pub fn to_json(&self) -> String {
        serde_json::json!({
            "upos": self.upos_acc,
            "uas": self.uas,
            "las": self.las,
            "mixed": self.mixed,
            "tokens": self.token_count,
        })
        .to_string()
    }
}

fn base_relation(rel: &str) -> &str {
    rel.split(':').next().unwrap_or(rel)
}

fn score_token(gold: &Token, pred: &Token, opts: &EvalOptions) -> Counts {
    let upos = gold.upos == pred.upos;
    let head = gold.head.is_some() && gold.head == pred.head;
    let rel = if opts.strip_subtypes {
        base_relation(&gold.deprel) == base_relation(&pred.deprel)
    } else {
        gold.deprel == pred.deprel
    };
    Counts {
        tokens: 1,
        upos: upos as usize,
        heads: head as usize,
        labeled: (head && rel) as usize,
        mixed: (upos && head && rel) as usize,
    }
}

/// Scores `pred` against `gold`. Both must have the same sentences and
/// tokens in the same order; the gold side decides punctuation filtering.
pub fn evaluate(gold: &Treebank, pred: &Treebank, opts: EvalOptions) -> Result<Metrics> {
    if gold.len() != pred.len() {
        return Err(Error::Alignment {
            sentence: gold.len().min(pred.len()),
            message: format!("gold has {} sentences, prediction has {}", gold.len(), pred.len()),
        });
    }
    let mut total = Counts::default();
    let mut per_sentence = Vec::with_capacity(gold.len());
    for (i, (gs, ps)) in gold.sentences.iter().zip(&pred.sentences).enumerate() {
        if gs.len() != ps.len() {
            return Err(Error::Alignment {
                sentence: i,
                message: format!("gold has {} tokens, prediction has {}", gs.len(), ps.len()),
            });
        }
        let mut counts = Counts::default();
        for (gt, pt) in gs.tokens.iter().zip(&ps.tokens) {
            if gt.form != pt.form {
                return Err(Error::Alignment {
                    sentence: i,
                    message: format!("token {}: gold form '{}' vs predicted '{}'", gt.id, gt.form, pt.form),
                });
            }
            if !opts.include_punct && gt.upos == "PUNCT" {
                continue;
            }
            counts.add(&score_token(gt, pt, &opts));
        }
        total.add(&counts);
        per_sentence.push(counts);
    }
    let mut metrics = Metrics::from_counts(&total);
    metrics.per_sentence = Some(per_sentence);
    Ok(metrics)
}

/// Fraction of `test` tokens whose lowercased form never occurs in `train`.
pub fn oov_rate(train: &Treebank, test: &Treebank) -> Result<f64> {
    if train.token_count() == 0 || test.token_count() == 0 {
        return Err(Error::Config("oov_rate needs non-empty treebanks".into()));
    }
    let known: HashSet<String> = train
        .sentences
        .iter()
        .flat_map(|s| s.tokens.iter().map(|t| normalize_word(&t.form)))
        .collect();
    let unseen = test
        .sentences
        .iter()
        .flat_map(|s| &s.tokens)
        .filter(|t| !known.contains(&normalize_word(&t.form)))
        .count();
    Ok(unseen as f64 / test.token_count() as f64)
}
