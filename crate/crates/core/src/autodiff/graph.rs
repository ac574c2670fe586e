use std::collections::HashMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::params::{ParamGrads, ParamId, ParamStore};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Input,
    Param(ParamId),
    Lookup { table: ParamId, row: usize },
    MatVec { w: Var, x: Var, offset: usize },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Concat(Vec<Var>),
    Slice { x: Var, start: usize },
    Tanh(Var),
    Logistic(Var),
    NegLogSoftmax { x: Var, gold: usize, probs: Vec<f64> },
    MaxScalar { x: Var, floor: f64 },
    Pick { x: Var, index: usize },
    Sum(Vec<Var>),
    Shift(Var),
}

#[derive(Debug)]
struct Node {
    shape: Vec<usize>,
    // `None` for parameter nodes; their value lives in the store.
    value: Option<Vec<f64>>,
    op: Op,
}

/// A dynamically built reverse-mode computation graph.
///
/// Values are computed eagerly as nodes are appended. Parameters are read
/// from the borrowed [`ParamStore`]; their gradients are returned by
/// [`Graph::backward`] rather than written back.
pub struct Graph<'a> {
    store: &'a ParamStore,
    nodes: Vec<Node>,
    param_vars: HashMap<ParamId, Var>,
}

/// Result of a backward pass.
pub struct Gradients {
    nodes: Vec<Option<Vec<f64>>>,
    pub params: ParamGrads,
}

impl Gradients {
    /// Gradient of the loss with respect to `var`, or `None` if the loss does not depend on it.
    pub fn wrt(&self, var: Var) -> Option<&[f64]> {
        self.nodes.get(var.0).and_then(|g| g.as_deref())
    }
}

fn dim_err(op: &'static str, a: &[usize], b: &[usize]) -> Error {
    Error::Dimension {
        op,
        left: a.to_vec(),
        right: b.to_vec(),
    }
}

fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl<'a> Graph<'a> {
    pub fn new(store: &'a ParamStore) -> Self {
        Graph {
            store,
            nodes: Vec::new(),
            param_vars: HashMap::new(),
        }
    }

    pub fn store(&self) -> &'a ParamStore {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<f64>, op: Op) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        self.nodes.push(Node {
            shape,
            value: Some(value),
            op,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        let node = &self.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(val), _) => val,
            (None, Op::Param(id)) => self.store.value(*id).data(),
            _ => unreachable!("node without value"),
        }
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn dim(&self, v: Var) -> usize {
        self.value(v).len()
    }

    /// Value of a one-element node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v)[0]
    }

    pub fn tensor(&self, v: Var) -> Tensor {
        Tensor::new(self.shape(v).to_vec(), self.value(v).to_vec()).expect("node shape is valid")
    }

    /// A leaf holding a constant; its gradient is still reported by `backward`.
    pub fn input(&mut self, t: Tensor) -> Var {
        let shape = t.shape().to_vec();
        self.push(shape, t.into_data(), Op::Input)
    }

    pub fn constant_scalar(&mut self, x: f64) -> Var {
        self.input(Tensor::scalar(x))
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.get(&id) {
            return v;
        }
        let shape = self.store.value(id).shape().to_vec();
        self.nodes.push(Node {
            shape,
            value: None,
            op: Op::Param(id),
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars.insert(id, v);
        v
    }

    /// Row `row` of a lookup table, as a vector.
    pub fn pick_row(&mut self, table: ParamId, row: usize) -> Result<Var> {
        let t = self.store.value(table);
        if t.shape().len() != 2 || row >= t.rows() {
            return Err(dim_err("pick_row", t.shape(), &[row]));
        }
        let value = t.row(row).to_vec();
        Ok(self.push(vec![value.len()], value, Op::Lookup { table, row }))
    }

    pub fn matvec(&mut self, w: Var, x: Var) -> Result<Var> {
        let ws = self.shape(w);
        if ws.len() != 2 || ws[1] != self.dim(x) {
            return Err(dim_err("matvec", ws, self.shape(x)));
        }
        self.matvec_block(w, x, 0)
    }

    /// `W[:, offset..offset+len(x)] · x`, i.e. the product with a column block of `W`.
    pub fn matvec_block(&mut self, w: Var, x: Var, offset: usize) -> Result<Var> {
        let ws = self.shape(w).to_vec();
        let k = self.dim(x);
        if ws.len() != 2 || offset + k > ws[1] {
            return Err(dim_err("matvec_block", &ws, self.shape(x)));
        }
        let (rows, cols) = (ws[0], ws[1]);
        let wv = self.value(w);
        let xv = self.value(x);
        let out: Vec<f64> = (0..rows)
            .map(|r| {
                let row = &wv[r * cols + offset..r * cols + offset + k];
                row.iter().zip(xv).map(|(a, b)| a * b).sum()
            })
            .collect();
        Ok(self.push(vec![rows], out, Op::MatVec { w, x, offset }))
    }

    fn check_same(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(dim_err(op, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    fn zip_with(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Var {
        let out: Vec<f64> = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| f(*x, *y))
            .collect();
        let shape = self.shape(a).to_vec();
        self.push(shape, out, op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same("add", a, b)?;
        Ok(self.zip_with(a, b, |x, y| x + y, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same("sub", a, b)?;
        Ok(self.zip_with(a, b, |x, y| x - y, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same("mul", a, b)?;
        Ok(self.zip_with(a, b, |x, y| x * y, Op::Mul(a, b)))
    }

    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::Contract("concat of zero nodes".into()));
        }
        let mut out = Vec::new();
        for &p in parts {
            if self.shape(p).len() != 1 {
                return Err(dim_err("concat", self.shape(p), &[]));
            }
            out.extend_from_slice(self.value(p));
        }
        Ok(self.push(vec![out.len()], out, Op::Concat(parts.to_vec())))
    }

    pub fn slice(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        if len == 0 || start + len > self.dim(x) {
            return Err(dim_err("slice", self.shape(x), &[start, len]));
        }
        let out = self.value(x)[start..start + len].to_vec();
        Ok(self.push(vec![len], out, Op::Slice { x, start }))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let out: Vec<f64> = self.value(x).iter().map(|v| v.tanh()).collect();
        let shape = self.shape(x).to_vec();
        self.push(shape, out, Op::Tanh(x))
    }

    pub fn logistic(&mut self, x: Var) -> Var {
        let out: Vec<f64> = self.value(x).iter().map(|&v| logistic(v)).collect();
        let shape = self.shape(x).to_vec();
        self.push(shape, out, Op::Logistic(x))
    }

    /// `-log softmax(x)[gold]`, computed with the log-sum-exp shift.
    pub fn neg_log_softmax(&mut self, x: Var, gold: usize) -> Result<Var> {
        let xv = self.value(x);
        if gold >= xv.len() {
            return Err(dim_err("neg_log_softmax", self.shape(x), &[gold]));
        }
        let max = xv.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = xv.iter().map(|v| (v - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        let loss = z.ln() + max - xv[gold];
        let probs = exps.iter().map(|e| e / z).collect();
        Ok(self.push(vec![1], vec![loss], Op::NegLogSoftmax { x, gold, probs }))
    }

    /// Elementwise `max(x, floor)`.
    pub fn max_scalar(&mut self, x: Var, floor: f64) -> Var {
        let out: Vec<f64> = self.value(x).iter().map(|&v| v.max(floor)).collect();
        let shape = self.shape(x).to_vec();
        self.push(shape, out, Op::MaxScalar { x, floor })
    }

    /// Element `index` of a vector, as a scalar node.
    pub fn pick(&mut self, x: Var, index: usize) -> Result<Var> {
        if index >= self.dim(x) {
            return Err(dim_err("pick", self.shape(x), &[index]));
        }
        let v = self.value(x)[index];
        Ok(self.push(vec![1], vec![v], Op::Pick { x, index }))
    }

    /// Elementwise sum of same-shaped nodes.
    pub fn sum(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::Contract("sum of zero nodes".into()))?;
        let mut out = self.value(first).to_vec();
        for &p in &parts[1..] {
            self.check_same("sum", first, p)?;
            out.iter_mut().zip(self.value(p)).for_each(|(a, b)| *a += b);
        }
        let shape = self.shape(first).to_vec();
        Ok(self.push(shape, out, Op::Sum(parts.to_vec())))
    }

    /// `x + offset` for a constant offset; gradient passes through unchanged.
    pub fn shift(&mut self, x: Var, offset: &[f64]) -> Result<Var> {
        if offset.len() != self.dim(x) {
            return Err(dim_err("shift", self.shape(x), &[offset.len()]));
        }
        let out: Vec<f64> = self.value(x).iter().zip(offset).map(|(a, b)| a + b).collect();
        let shape = self.shape(x).to_vec();
        Ok(self.push(shape, out, Op::Shift(x)))
    }

    /// Adds i.i.d. `N(0, sigma²)` noise in training mode; identity otherwise.
    pub fn gaussian_noise<R: Rng + ?Sized>(&mut self, x: Var, sigma: f64, training: bool, rng: &mut R) -> Result<Var> {
        if !training || sigma == 0.0 {
            return Ok(x);
        }
        let normal = Normal::new(0.0, sigma).map_err(|e| Error::Contract(format!("noise sigma: {e}")))?;
        let noise: Vec<f64> = (0..self.dim(x)).map(|_| normal.sample(rng)).collect();
        self.shift(x, &noise)
    }

    /// Reverse pass from a one-element `loss` node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.shape(loss) != [1] {
            return Err(Error::Contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        let mut params = ParamGrads::default();

        fn acc(grads: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut Vec<f64> {
            grads[v.0].get_or_insert_with(|| vec![0.0; len])
        }

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Input => {}
                Op::Param(id) => params.add_dense(*id, &g),
                Op::Lookup { table, row } => params.add_row(*table, *row, &g),
                Op::MatVec { w, x, offset } => {
                    let ws = self.shape(*w);
                    let cols = ws[1];
                    let k = self.dim(*x);
                    let wv = self.value(*w);
                    let xv = self.value(*x);
                    {
                        let gx = acc(&mut grads, *x, k);
                        for (r, gr) in g.iter().enumerate() {
                            if *gr == 0.0 {
                                continue;
                            }
                            let row = &wv[r * cols + offset..r * cols + offset + k];
                            gx.iter_mut().zip(row).for_each(|(a, b)| *a += gr * b);
                        }
                    }
                    let gw = acc(&mut grads, *w, wv.len());
                    for (r, gr) in g.iter().enumerate() {
                        if *gr == 0.0 {
                            continue;
                        }
                        let row = &mut gw[r * cols + offset..r * cols + offset + k];
                        row.iter_mut().zip(xv).for_each(|(a, b)| *a += gr * b);
                    }
                }
                Op::Add(a, b) => {
                    for v in [*a, *b] {
                        acc(&mut grads, v, g.len())
                            .iter_mut()
                            .zip(&g)
                            .for_each(|(s, d)| *s += d);
                    }
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, *a, g.len())
                        .iter_mut()
                        .zip(&g)
                        .for_each(|(s, d)| *s += d);
                    acc(&mut grads, *b, g.len())
                        .iter_mut()
                        .zip(&g)
                        .for_each(|(s, d)| *s -= d);
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let ga: Vec<f64> = g.iter().zip(bv).map(|(d, y)| d * y).collect();
                    let gb: Vec<f64> = g.iter().zip(av).map(|(d, x)| d * x).collect();
                    acc(&mut grads, *a, g.len())
                        .iter_mut()
                        .zip(&ga)
                        .for_each(|(s, d)| *s += d);
                    acc(&mut grads, *b, g.len())
                        .iter_mut()
                        .zip(&gb)
                        .for_each(|(s, d)| *s += d);
                }
                Op::Concat(parts) => {
                    let mut start = 0;
                    for &p in parts {
                        let len = self.dim(p);
                        acc(&mut grads, p, len)
                            .iter_mut()
                            .zip(&g[start..start + len])
                            .for_each(|(s, d)| *s += d);
                        start += len;
                    }
                }
                Op::Slice { x, start } => {
                    let len = self.dim(*x);
                    acc(&mut grads, *x, len)[*start..*start + g.len()]
                        .iter_mut()
                        .zip(&g)
                        .for_each(|(s, d)| *s += d);
                }
                Op::Tanh(x) => {
                    let y = node.value.as_ref().unwrap();
                    acc(&mut grads, *x, g.len())
                        .iter_mut()
                        .zip(g.iter().zip(y))
                        .for_each(|(s, (d, y))| *s += d * (1.0 - y * y));
                }
                Op::Logistic(x) => {
                    let y = node.value.as_ref().unwrap();
                    acc(&mut grads, *x, g.len())
                        .iter_mut()
                        .zip(g.iter().zip(y))
                        .for_each(|(s, (d, y))| *s += d * y * (1.0 - y));
                }
                Op::NegLogSoftmax { x, gold, probs } => {
                    let gx = acc(&mut grads, *x, probs.len());
                    for (i, p) in probs.iter().enumerate() {
                        let onehot = if i == *gold { 1.0 } else { 0.0 };
                        gx[i] += g[0] * (p - onehot);
                    }
                }
                Op::MaxScalar { x, floor } => {
                    let xv = self.value(*x);
                    let gx = acc(&mut grads, *x, g.len());
                    for i in 0..g.len() {
                        if xv[i] > *floor {
                            gx[i] += g[i];
                        }
                    }
                }
                Op::Pick { x, index } => {
                    let len = self.dim(*x);
                    acc(&mut grads, *x, len)[*index] += g[0];
                }
                Op::Sum(parts) => {
                    for &p in parts {
                        acc(&mut grads, p, g.len())
                            .iter_mut()
                            .zip(&g)
                            .for_each(|(s, d)| *s += d);
                    }
                }
                Op::Shift(x) => {
                    acc(&mut grads, *x, g.len())
                        .iter_mut()
                        .zip(&g)
                        .for_each(|(s, d)| *s += d);
                }
            }
            grads[idx] = Some(g);
        }
        Ok(Gradients { nodes: grads, params })
    }
}
