//! Exact projective decoding over arc-factored scores.

use crate::error::{Error, Result};

/// Arc scores for a sentence of `n` tokens, indexed `[head][modifier]` with
/// head 0 standing for ROOT. Column 0 and the diagonal are never read.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreMatrix {
    n: usize,
    data: Vec<f64>,
}

impl ScoreMatrix {
    pub fn zeros(n: usize) -> Self {
        ScoreMatrix {
            n,
            data: vec![0.0; (n + 1) * (n + 1)],
        }
    }

    /// Builds a matrix from `(n + 1)` rows of `(n + 1)` entries each.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let size = rows.len();
        if size < 2 || rows.iter().any(|r| r.len() != size) {
            return Err(Error::Contract("score matrix must be square with n >= 1".into()));
        }
        Ok(ScoreMatrix {
            n: size - 1,
            data: rows.concat(),
        })
    }

    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = ScoreMatrix::zeros(n);
        for h in 0..=n {
            for d in 1..=n {
                if h != d {
                    m.set(h, d, f(h, d));
                }
            }
        }
        m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, head: usize, modifier: usize) -> f64 {
        self.data[head * (self.n + 1) + modifier]
    }

    pub fn set(&mut self, head: usize, modifier: usize, value: f64) {
        self.data[head * (self.n + 1) + modifier] = value;
    }

    fn all_finite(&self) -> bool {
        (0..=self.n).all(|h| (1..=self.n).all(|m| h == m || self.get(h, m).is_finite()))
    }
}

/// A dependency tree: `heads[i]` is the head of token `i + 1`, 0 = ROOT.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParseTree {
    pub heads: Vec<usize>,
    pub labels: Option<Vec<usize>>,
}

impl ParseTree {
    pub fn new(heads: Vec<usize>) -> Self {
        ParseTree { heads, labels: None }
    }

    pub fn len(&self) -> usize {
        self.heads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heads.is_empty()
    }

    /// Head of token `m` (1-based).
    pub fn head_of(&self, m: usize) -> usize {
        self.heads[m - 1]
    }

    /// Number of tokens whose head differs from `other`.
    pub fn hamming(&self, other: &ParseTree) -> usize {
        self.heads.iter().zip(&other.heads).filter(|(a, b)| a != b).count()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RootConstraint {
    /// Exactly one token attaches to ROOT.
    Single,
    /// Any number of tokens may attach to ROOT.
    Multi,
}

const LEFT: usize = 0;
const RIGHT: usize = 1;

struct Chart {
    size: usize,
    score: Vec<f64>,
    split: Vec<usize>,
}

impl Chart {
    fn new(size: usize) -> Self {
        Chart {
            size,
            score: vec![f64::NEG_INFINITY; size * size * 2],
            split: vec![0; size * size * 2],
        }
    }

    fn idx(&self, s: usize, t: usize, dir: usize) -> usize {
        (s * self.size + t) * 2 + dir
    }

    fn get(&self, s: usize, t: usize, dir: usize) -> f64 {
        self.score[self.idx(s, t, dir)]
    }

    fn set(&mut self, s: usize, t: usize, dir: usize, value: f64, split: usize) {
        let i = self.idx(s, t, dir);
        self.score[i] = value;
        self.split[i] = split;
    }

    fn split(&self, s: usize, t: usize, dir: usize) -> usize {
        self.split[self.idx(s, t, dir)]
    }
}

/// Highest-scoring projective tree under the given ROOT constraint.
///
/// O(n³) dynamic program over complete and incomplete spans. Ties prefer the
/// smaller head index, then the smaller split point.
pub fn eisner_decode(scores: &ScoreMatrix, root: RootConstraint) -> Result<ParseTree> {
    let n = scores.n();
    if n == 0 {
        return Err(Error::Contract("cannot decode an empty sentence".into()));
    }
    if !scores.all_finite() {
        return Err(Error::Contract("score matrix contains non-finite values".into()));
    }
    let size = n + 1;
    // complete[s][t][RIGHT]: head s spans s..t; [LEFT]: head t spans s..t.
    let mut complete = Chart::new(size);
    let mut incomplete = Chart::new(size);
    for s in 0..size {
        complete.set(s, s, LEFT, 0.0, s);
        complete.set(s, s, RIGHT, 0.0, s);
    }

    for width in 1..size {
        for s in 0..size - width {
            let t = s + width;

            // Incomplete spans: arc between s and t, split s <= r < t.
            let mut best_left = (f64::NEG_INFINITY, s);
            let mut best_right = (f64::NEG_INFINITY, s);
            for r in s..t {
                let inner = complete.get(s, r, RIGHT) + complete.get(r + 1, t, LEFT);
                if inner > best_right.0 {
                    best_right = (inner, r);
                }
                if inner > best_left.0 {
                    best_left = (inner, r);
                }
            }
            // ROOT can never be a modifier.
            if s > 0 {
                incomplete.set(s, t, LEFT, best_left.0 + scores.get(t, s), best_left.1);
            }
            incomplete.set(s, t, RIGHT, best_right.0 + scores.get(s, t), best_right.1);

            // Complete left (head t): C[s][r][LEFT] + I[r][t][LEFT], s <= r < t.
            let mut best = (f64::NEG_INFINITY, s);
            for r in s..t {
                let v = complete.get(s, r, LEFT) + incomplete.get(r, t, LEFT);
                if v > best.0 {
                    best = (v, r);
                }
            }
            complete.set(s, t, LEFT, best.0, best.1);

            // Complete right (head s): I[s][r][RIGHT] + C[r][t][RIGHT], s < r <= t.
            let mut best = (f64::NEG_INFINITY, s + 1);
            for r in s + 1..=t {
                let v = incomplete.get(s, r, RIGHT) + complete.get(r, t, RIGHT);
                if v > best.0 {
                    best = (v, r);
                }
            }
            complete.set(s, t, RIGHT, best.0, best.1);
        }
    }

    let mut heads = vec![0usize; n];
    let mut stack: Vec<(bool, usize, usize, usize)> = Vec::new();
    match root {
        RootConstraint::Multi => stack.push((true, 0, n, RIGHT)),
        RootConstraint::Single => {
            // The single root child r covers 1..r to its left and r..n to its right.
            let mut best = (f64::NEG_INFINITY, 1);
            for r in 1..=n {
                let v = scores.get(0, r) + complete.get(1, r, LEFT) + complete.get(r, n, RIGHT);
                if v > best.0 {
                    best = (v, r);
                }
            }
            let r = best.1;
            heads[r - 1] = 0;
            stack.push((true, 1, r, LEFT));
            stack.push((true, r, n, RIGHT));
        }
    }

    while let Some((is_complete, s, t, dir)) = stack.pop() {
        if s == t {
            continue;
        }
        if is_complete {
            if dir == LEFT {
                let r = complete.split(s, t, LEFT);
                stack.push((true, s, r, LEFT));
                stack.push((false, r, t, LEFT));
            } else {
                let r = complete.split(s, t, RIGHT);
                stack.push((false, s, r, RIGHT));
                stack.push((true, r, t, RIGHT));
            }
        } else {
            if dir == LEFT {
                heads[s - 1] = t;
            } else {
                heads[t - 1] = s;
            }
            let r = incomplete.split(s, t, dir);
            stack.push((true, s, r, RIGHT));
            stack.push((true, r + 1, t, LEFT));
        }
    }
    Ok(ParseTree::new(heads))
}

/// Adds `margin` to every cell that is not an arc of `gold`.
pub fn loss_augment(scores: &ScoreMatrix, gold: &ParseTree, margin: f64) -> Result<ScoreMatrix> {
    let n = scores.n();
    if gold.len() != n || gold.heads.iter().any(|&h| h > n) {
        return Err(Error::Contract(format!(
            "gold tree does not fit a sentence of {n} tokens"
        )));
    }
    let mut out = scores.clone();
    for h in 0..=n {
        for m in 1..=n {
            if h != m && gold.head_of(m) != h {
                out.set(h, m, scores.get(h, m) + margin);
            }
        }
    }
    Ok(out)
}

/// Sum of the scores of the tree's arcs.
pub fn tree_score(scores: &ScoreMatrix, tree: &ParseTree) -> Result<f64> {
    let n = scores.n();
    if tree.len() != n {
        return Err(Error::Contract(format!(
            "tree has {} tokens, scores have {n}",
            tree.len()
        )));
    }
    let mut total = 0.0;
    for (i, &h) in tree.heads.iter().enumerate() {
        if h > n || h == i + 1 {
            return Err(Error::Contract(format!("invalid head {h} for token {}", i + 1)));
        }
        total += scores.get(h, i + 1);
    }
    Ok(total)
}
