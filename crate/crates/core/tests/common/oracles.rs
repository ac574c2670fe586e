//! Reference implementations used only by tests. Nothing here calls into the
//! code paths they check.

use jptdp::eisner::ScoreMatrix;

/// Every head of every token reaches ROOT without a cycle.
pub fn is_tree(heads: &[usize]) -> bool {
    let n = heads.len();
    for start in 1..=n {
        let mut node = start;
        let mut steps = 0;
        while node != 0 {
            if heads[node - 1] == node {
                return false;
            }
            node = heads[node - 1];
            steps += 1;
            if steps > n {
                return false;
            }
        }
    }
    true
}

/// Pairwise crossing check: exactly one endpoint of one arc lies strictly
/// inside the other arc's span.
pub fn crossing_free(heads: &[usize]) -> bool {
    let arcs: Vec<(usize, usize)> = heads
        .iter()
        .enumerate()
        .map(|(i, &h)| (h.min(i + 1), h.max(i + 1)))
        .collect();
    for (a, &(l1, r1)) in arcs.iter().enumerate() {
        for &(l2, r2) in &arcs[a + 1..] {
            let inside = |x: usize, l: usize, r: usize| l < x && x < r;
            let l2_in = inside(l2, l1, r1);
            let r2_in = inside(r2, l1, r1);
            let strictly_outside = |x: usize| x < l1 || x > r1;
            if (l2_in && strictly_outside(r2)) || (r2_in && strictly_outside(l2)) {
                return false;
            }
        }
    }
    true
}

/// All projective trees over n tokens, optionally restricted to one ROOT child.
pub fn projective_trees(n: usize, single_root: bool) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut heads = vec![0usize; n];
    fn rec(i: usize, heads: &mut Vec<usize>, single_root: bool, out: &mut Vec<Vec<usize>>) {
        let n = heads.len();
        if i == n {
            let roots = heads.iter().filter(|&&h| h == 0).count();
            if (!single_root || roots == 1) && is_tree(heads) && crossing_free(heads) {
                out.push(heads.clone());
            }
            return;
        }
        for h in 0..=n {
            if h == i + 1 {
                continue;
            }
            heads[i] = h;
            rec(i + 1, heads, single_root, out);
        }
    }
    rec(0, &mut heads, single_root, &mut out);
    out
}

pub fn manual_score(scores: &ScoreMatrix, heads: &[usize]) -> f64 {
    let mut total = 0.0;
    for (i, &h) in heads.iter().enumerate() {
        total += scores.get(h, i + 1);
    }
    total
}

/// Best tree by exhaustive search, first one found on ties.
pub fn brute_force_best(scores: &ScoreMatrix, trees: &[Vec<usize>]) -> (Vec<usize>, f64) {
    let mut best: Option<(Vec<usize>, f64)> = None;
    for t in trees {
        let s = manual_score(scores, t);
        if best.as_ref().is_none_or(|(_, b)| s > *b) {
            best = Some((t.clone(), s));
        }
    }
    best.expect("at least one tree")
}
