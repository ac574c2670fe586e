//! Reading and writing CoNLL-U treebanks.
//!
//! Only syntactic words (integer ids) become [`Token`]s. Comment lines,
//! multiword-token ranges (`3-4`) and empty nodes (`5.1`) are kept verbatim
//! so that an unmodified treebank is written back byte for byte.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Placeholder for an empty CoNLL-U field.
pub const EMPTY: &str = "_";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Token {
    pub id: usize,
    pub form: String,
    pub lemma: String,
    pub upos: String,
    pub xpos: String,
    pub feats: String,
    /// `None` when the column holds `_`; `Some(0)` is ROOT.
    pub head: Option<usize>,
    pub deprel: String,
    pub deps: String,
    pub misc: String,
}

impl Token {
    pub fn new(id: usize, form: impl Into<String>) -> Self {
        Token {
            id,
            form: form.into(),
            lemma: EMPTY.into(),
            upos: EMPTY.into(),
            xpos: EMPTY.into(),
            feats: EMPTY.into(),
            head: None,
            deprel: EMPTY.into(),
            deps: EMPTY.into(),
            misc: EMPTY.into(),
        }
    }

    pub fn with_annotation(mut self, upos: &str, head: usize, deprel: &str) -> Self {
        self.upos = upos.into();
        self.head = Some(head);
        self.deprel = deprel.into();
        self
    }

    fn write_line(&self, out: &mut String) {
        let head = match self.head {
            Some(h) => h.to_string(),
            None => EMPTY.to_string(),
        };
        let _ = write!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            self.id, self.form, self.lemma, self.upos, self.xpos, self.feats, head, self.deprel, self.deps, self.misc
        );
    }
}

/// One line of a sentence block, in file order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Line {
    /// Index into [`Sentence::tokens`].
    Token(usize),
    /// Comment, multiword range or empty node, kept verbatim.
    Raw(String),
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Sentence {
    pub tokens: Vec<Token>,
    pub lines: Vec<Line>,
    /// Blank lines following the block.
    pub blank_lines_after: usize,
}

impl Sentence {
    /// Builds a sentence with no extra lines from a list of tokens.
    pub fn from_tokens(tokens: Vec<Token>) -> Self {
        let lines = (0..tokens.len()).map(Line::Token).collect();
        Sentence {
            tokens,
            lines,
            blank_lines_after: 1,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn forms(&self) -> impl Iterator<Item = &str> {
        self.tokens.iter().map(|t| t.form.as_str())
    }

    /// Heads of tokens 1..n, or `None` if any is unspecified.
    pub fn heads(&self) -> Option<Vec<usize>> {
        self.tokens.iter().map(|t| t.head).collect()
    }

    pub fn comments(&self) -> impl Iterator<Item = &str> {
        self.lines.iter().filter_map(|l| match l {
            Line::Raw(s) if s.starts_with('#') => Some(s.as_str()),
            _ => None,
        })
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Treebank {
    pub sentences: Vec<Sentence>,
    pub source_path: String,
    leading_blank_lines: usize,
    missing_final_newline: bool,
}

impl Treebank {
    pub fn new(sentences: Vec<Sentence>) -> Self {
        Treebank {
            sentences,
            ..Default::default()
        }
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    pub fn token_count(&self) -> usize {
        self.sentences.iter().map(Sentence::len).sum()
    }
}

pub fn read_conllu(path: impl AsRef<Path>) -> Result<Treebank> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut tb = parse_conllu(&text, &path.display().to_string())?;
    tb.source_path = path.display().to_string();
    Ok(tb)
}

pub fn write_conllu(treebank: &Treebank, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, to_conllu_string(treebank)).map_err(|e| Error::io(path, e))
}

enum IdKind {
    Word(usize),
    Other,
}

fn classify_id(id: &str) -> Option<IdKind> {
    if id.contains('-') || id.contains('.') {
        let sep = if id.contains('-') { '-' } else { '.' };
        let (a, b) = id.split_once(sep)?;
        if a.parse::<usize>().is_ok() && b.parse::<usize>().is_ok() {
            return Some(IdKind::Other);
        }
        return None;
    }
    id.parse::<usize>().ok().filter(|&v| v >= 1).map(IdKind::Word)
}

/// Parses CoNLL-U text. `origin` is only used in error messages.
pub fn parse_conllu(text: &str, origin: &str) -> Result<Treebank> {
    let missing_final_newline = !text.is_empty() && !text.ends_with('\n');
    let body = text.strip_suffix('\n').unwrap_or(text);
    let mut tb = Treebank {
        source_path: origin.to_string(),
        missing_final_newline,
        ..Default::default()
    };
    if text.is_empty() {
        return Ok(tb);
    }

    let err = |line: usize, message: String| Error::Parse {
        path: origin.to_string(),
        line,
        message,
    };

    let mut current: Option<(Sentence, usize)> = None;
    for (i, line) in body.split('\n').enumerate() {
        let lineno = i + 1;
        if line.is_empty() {
            match current.take() {
                Some((mut sent, start)) => {
                    finish_sentence(&sent, origin, start)?;
                    sent.blank_lines_after = 1;
                    tb.sentences.push(sent);
                }
                None => match tb.sentences.last_mut() {
                    Some(prev) => prev.blank_lines_after += 1,
                    None => tb.leading_blank_lines += 1,
                },
            }
            continue;
        }
        let (sent, _) = current.get_or_insert_with(|| (Sentence::default(), lineno));
        if line.starts_with('#') {
            sent.lines.push(Line::Raw(line.to_string()));
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 10 {
            return Err(err(
                lineno,
                format!("expected 10 tab-separated columns, found {}", cols.len()),
            ));
        }
        match classify_id(cols[0]) {
            None => return Err(err(lineno, format!("invalid token id '{}'", cols[0]))),
            Some(IdKind::Other) => sent.lines.push(Line::Raw(line.to_string())),
            Some(IdKind::Word(id)) => {
                let expected = sent.tokens.len() + 1;
                if id != expected {
                    return Err(err(
                        lineno,
                        format!("token id {id} out of sequence, expected {expected}"),
                    ));
                }
                let head = match cols[6] {
                    EMPTY => None,
                    h => Some(
                        h.parse::<usize>()
                            .map_err(|_| err(lineno, format!("non-integer head '{h}'")))?,
                    ),
                };
                if head == Some(id) {
                    return Err(err(lineno, format!("token {id} is its own head")));
                }
                sent.tokens.push(Token {
                    id,
                    form: cols[1].into(),
                    lemma: cols[2].into(),
                    upos: cols[3].into(),
                    xpos: cols[4].into(),
                    feats: cols[5].into(),
                    head,
                    deprel: cols[7].into(),
                    deps: cols[8].into(),
                    misc: cols[9].into(),
                });
                sent.lines.push(Line::Token(sent.tokens.len() - 1));
            }
        }
    }
    if let Some((sent, start)) = current.take() {
        finish_sentence(&sent, origin, start)?;
        tb.sentences.push(sent);
    }
    Ok(tb)
}

fn finish_sentence(sent: &Sentence, origin: &str, start_line: usize) -> Result<()> {
    let n = sent.tokens.len();
    let err = |message: String| Error::Parse {
        path: origin.to_string(),
        line: start_line,
        message,
    };
    if n == 0 {
        return Err(err("sentence block without word tokens".into()));
    }
    for t in &sent.tokens {
        if let Some(h) = t.head {
            if h > n {
                return Err(err(format!("token {} has head {h} beyond sentence length {n}", t.id)));
            }
        }
    }
    Ok(())
}

pub fn to_conllu_string(treebank: &Treebank) -> String {
    let mut out = String::new();
    for _ in 0..treebank.leading_blank_lines {
        out.push('\n');
    }
    for sent in &treebank.sentences {
        for line in &sent.lines {
            match line {
                Line::Token(i) => sent.tokens[*i].write_line(&mut out),
                Line::Raw(s) => out.push_str(s),
            }
            out.push('\n');
        }
        for _ in 0..sent.blank_lines_after {
            out.push('\n');
        }
    }
    if treebank.missing_final_newline && out.ends_with('\n') {
        out.pop();
    }
    out
}

/// Checks that `heads` (head of token `i + 1` at index `i`, 0 = ROOT)
/// describes a tree: every token reaches ROOT without a cycle.
pub fn check_tree(heads: &[usize]) -> Result<()> {
    let n = heads.len();
    for (i, &h) in heads.iter().enumerate() {
        if h > n {
            return Err(Error::Structure(format!("token {} has head {h} beyond {n}", i + 1)));
        }
        if h == i + 1 {
            return Err(Error::Structure(format!("token {} is its own head", i + 1)));
        }
    }
    // 0 = unvisited, 1 = on current path, 2 = known to reach ROOT.
    let mut state = vec![0u8; n + 1];
    state[0] = 2;
    for start in 1..=n {
        let mut path = Vec::new();
        let mut node = start;
        while state[node] == 0 {
            state[node] = 1;
            path.push(node);
            node = heads[node - 1];
        }
        if state[node] == 1 {
            return Err(Error::Structure(format!("cycle through token {node}")));
        }
        for p in path {
            state[p] = 2;
        }
    }
    Ok(())
}

/// True iff no two arcs of the tree cross. ROOT sits at position 0.
pub fn is_projective_heads(heads: &[usize]) -> Result<bool> {
    check_tree(heads)?;
    let n = heads.len();
    // An arc (h, m) is non-projective iff some token strictly between h and m
    // is not dominated by h. Dominance via ancestor walk.
    for (i, &h) in heads.iter().enumerate() {
        let m = i + 1;
        let (lo, hi) = if h < m { (h, m) } else { (m, h) };
        for k in lo + 1..hi {
            let mut a = k;
            while a != 0 && a != h {
                a = heads[a - 1];
            }
            if a != h {
                return Ok(false);
            }
        }
    }
    debug_assert!(n == heads.len());
    Ok(true)
}

pub fn is_projective(sentence: &Sentence) -> Result<bool> {
    let heads = sentence
        .heads()
        .ok_or_else(|| Error::Structure("sentence has unspecified heads".into()))?;
    is_projective_heads(&heads)
}
