//! Generated treebanks with known projective structure.

use jptdp::conllu::{Sentence, Token, Treebank};
use jptdp::model::seeded_rng;
use rand::seq::IndexedRandom;
use rand::Rng;

struct Builder {
    rows: Vec<(String, &'static str, usize, &'static str)>,
}

impl Builder {
    fn push(&mut self, form: &str, upos: &'static str, rel: &'static str) -> usize {
        self.rows.push((form.to_string(), upos, 0, rel));
        self.rows.len()
    }

    fn attach(&mut self, dependent: usize, head: usize) {
        self.rows[dependent - 1].2 = head;
    }

    fn finish(self) -> Sentence {
        Sentence::from_tokens(
            self.rows
                .into_iter()
                .enumerate()
                .map(|(i, (f, u, h, r))| Token::new(i + 1, f).with_annotation(u, h, r))
                .collect(),
        )
    }
}

const DETS: &[&str] = &["the", "a", "this", "every"];
const ADJS: &[&str] = &["old", "red", "quiet", "small", "bright", "heavy"];
const NOUNS: &[&str] = &[
    "dog", "cat", "river", "house", "teacher", "garden", "letter", "window", "city", "child", "storm", "book",
];
const VERBS: &[&str] = &[
    "sees", "finds", "opens", "likes", "paints", "follows", "sleeps", "waits",
];
const PREPS: &[&str] = &["in", "near", "under", "with"];
const ADVS: &[&str] = &["slowly", "today", "often", "again"];

/// English-like sentences: `NP VERB [NP] [PP] [ADV] .`, every one projective.
pub fn english_like(count: usize, seed: u64) -> Treebank {
    let mut rng = seeded_rng(seed);
    let mut sentences = Vec::with_capacity(count);
    for _ in 0..count {
        let mut b = Builder { rows: Vec::new() };
        let subj = noun_phrase(&mut b, &mut rng, "nsubj");
        let verb = b.push(VERBS.choose(&mut rng).unwrap(), "VERB", "root");
        b.attach(subj, verb);
        if rng.random_bool(0.6) {
            let obj = noun_phrase(&mut b, &mut rng, "obj");
            b.attach(obj, verb);
        }
        if rng.random_bool(0.5) {
            let case = b.push(PREPS.choose(&mut rng).unwrap(), "ADP", "case");
            let obl = noun_phrase(&mut b, &mut rng, "obl");
            b.attach(case, obl);
            b.attach(obl, verb);
        }
        if rng.random_bool(0.4) {
            let adv = b.push(ADVS.choose(&mut rng).unwrap(), "ADV", "advmod");
            b.attach(adv, verb);
        }
        let punct = b.push(".", "PUNCT", "punct");
        b.attach(punct, verb);
        sentences.push(b.finish());
    }
    Treebank::new(sentences)
}

fn noun_phrase(b: &mut Builder, rng: &mut impl Rng, rel: &'static str) -> usize {
    let mut mods = Vec::new();
    if rng.random_bool(0.7) {
        mods.push(b.push(DETS.choose(rng).unwrap(), "DET", "det"));
    }
    if rng.random_bool(0.4) {
        mods.push(b.push(ADJS.choose(rng).unwrap(), "ADJ", "amod"));
    }
    let noun = b.push(NOUNS.choose(rng).unwrap(), "NOUN", rel);
    for m in mods {
        b.attach(m, noun);
    }
    noun
}

/// Stems built from consonant-vowel syllables, unique within one call.
pub fn stems(count: usize, seed: u64) -> Vec<String> {
    const C: &[char] = &['k', 'l', 'm', 'n', 'p', 'r', 's', 't', 'v', 'h'];
    const V: &[char] = &['a', 'e', 'i', 'o', 'u', 'y'];
    let mut rng = seeded_rng(seed);
    let mut out = std::collections::BTreeSet::new();
    while out.len() < count {
        let syllables = rng.random_range(2..=3);
        let s: String = (0..syllables)
            .flat_map(|_| [*C.choose(&mut rng).unwrap(), *V.choose(&mut rng).unwrap()])
            .collect();
        out.insert(s);
    }
    let mut v: Vec<String> = out.into_iter().collect();
    // Deterministic but not alphabetical.
    for i in (1..v.len()).rev() {
        let j = rng.random_range(0..=i);
        v.swap(i, j);
    }
    v
}

/// A free-word-order agglutinative language: the suffix alone marks the
/// part of speech and the grammatical relation, so an unseen stem is
/// only interpretable through its characters.
///
/// Each token's stem is drawn from `known` with probability `p_known`
/// and from `unknown` otherwise.
pub fn agglutinative(count: usize, known: &[String], unknown: &[String], p_known: f64, seed: u64) -> Treebank {
    let mut rng = seeded_rng(seed);
    let stem = |rng: &mut jptdp::model::ModelRng| -> String {
        let pool = if unknown.is_empty() || rng.random_bool(p_known) {
            known
        } else {
            unknown
        };
        pool.choose(rng).unwrap().clone()
    };
    let mut sentences = Vec::with_capacity(count);
    for _ in 0..count {
        // (form, upos, is_modifier, rel); order is shuffled at phrase level.
        let mut phrases: Vec<Vec<(String, &'static str, bool, &'static str)>> = Vec::new();
        phrases.push(vec![(format!("{}ta", stem(&mut rng)), "VERB", false, "root")]);
        let mut args = vec![("ko", "nsubj")];
        if rng.random_bool(0.7) {
            args.push(("pa", "obj"));
        }
        if rng.random_bool(0.5) {
            args.push(("ssa", "obl"));
        }
        for (suffix, rel) in args {
            let mut phrase = Vec::new();
            if rng.random_bool(0.4) {
                phrase.push((format!("{}n", stem(&mut rng)), "NOUN", true, "nmod"));
            }
            if rng.random_bool(0.4) {
                phrase.push((format!("{}inen", stem(&mut rng)), "ADJ", true, "amod"));
            }
            phrase.push((format!("{}{suffix}", stem(&mut rng)), "NOUN", false, rel));
            phrases.push(phrase);
        }
        if rng.random_bool(0.4) {
            phrases.push(vec![(format!("{}sti", stem(&mut rng)), "ADV", false, "advmod")]);
        }
        for i in (1..phrases.len()).rev() {
            let j = rng.random_range(0..=i);
            phrases.swap(i, j);
        }

        let mut b = Builder { rows: Vec::new() };
        let mut verb = 0;
        let mut args = Vec::new();
        for phrase in phrases {
            let mut mods = Vec::new();
            for (form, upos, is_modifier, rel) in phrase {
                let id = b.push(&form, upos, rel);
                match (is_modifier, upos) {
                    (true, _) => mods.push(id),
                    (false, "VERB") => verb = id,
                    (false, _) => {
                        for m in mods.drain(..) {
                            b.attach(m, id);
                        }
                        args.push(id);
                    }
                }
            }
        }
        for a in args {
            b.attach(a, verb);
        }
        sentences.push(b.finish());
    }
    Treebank::new(sentences)
}
