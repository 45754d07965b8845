//! Eager, tape-based reverse-mode differentiation over [`Matrix`] values.
//!
//! Every operation evaluates immediately and appends a node to the tape.
//! Parents always precede their children, so a reverse sweep over node
//! indices visits the graph in topological order.

use crate::error::{Error, Result};

use super::matrix::Matrix;

/// Clamp applied to `log` inputs and division denominators.
pub const DEFAULT_CLAMP: f64 = 1e-12;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinaryKind {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UnaryKind {
    Relu,
    Sigmoid,
    Exp,
    Log,
    Sqrt,
    Square,
    Neg,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReduceKind {
    Sum,
    Mean,
    RowSum,
    ColSum,
    RowMax,
}

/// How the right operand of a binary op is stretched to the left shape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Broadcast {
    Full,
    Row,
    Col,
    Scalar,
}

impl Broadcast {
    fn resolve(lhs: (usize, usize), rhs: (usize, usize)) -> Option<Self> {
        if lhs == rhs {
            Some(Broadcast::Full)
        } else if rhs == (1, 1) {
            Some(Broadcast::Scalar)
        } else if rhs == (1, lhs.1) {
            Some(Broadcast::Row)
        } else if rhs == (lhs.0, 1) {
            Some(Broadcast::Col)
        } else {
            None
        }
    }

    #[inline]
    fn index(self, i: usize, j: usize, rhs_cols: usize) -> usize {
        match self {
            Broadcast::Full => i * rhs_cols + j,
            Broadcast::Row => j,
            Broadcast::Col => i,
            Broadcast::Scalar => 0,
        }
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Binary(BinaryKind, Var, Var, Broadcast),
    Unary(UnaryKind, Var),
    Scale(Var, f64),
    Reduce(ReduceKind, Var, Vec<usize>),
    RowSoftmax(Var, f64),
    RowL2Normalize(Var, Vec<f64>),
    ConcatCols(Vec<Var>),
    Transpose(Var),
}

#[derive(Debug)]
struct Node {
    value: Matrix,
    op: Op,
    requires_grad: bool,
}

/// A recording of one forward computation.
#[derive(Debug)]
pub struct Tape {
    nodes: Vec<Node>,
    clamp: Option<f64>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            clamp: Some(DEFAULT_CLAMP),
        }
    }

    /// `None` disables clamping; `log` of a non-positive value then errors.
    pub fn with_clamp(clamp: Option<f64>) -> Self {
        Tape {
            nodes: Vec::new(),
            clamp,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Trainable leaf: gradients are reported for it.
    pub fn param(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Constant leaf: no gradient flows into it.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    pub fn scalar(&self, v: Var) -> Option<f64> {
        self.nodes[v.0].value.scalar_value()
    }

    fn push(&mut self, value: Matrix, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        let rg = self.needs(&[a, b]);
        Ok(self.push(value, Op::MatMul(a, b), rg))
    }

    /// Elementwise binary op. `b` may be full-shape, a row vector, a column
    /// vector or a 1×1 scalar; it is broadcast to the shape of `a`.
    pub fn elementwise(&mut self, a: Var, b: Var, kind: BinaryKind) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let bc = Broadcast::resolve(sa, sb).ok_or(Error::Dimension {
            op: "elementwise",
            lhs: sa,
            rhs: sb,
        })?;
        let clamp = self.clamp;
        let av = self.value(a);
        let bv = self.value(b);
        let mut out = Matrix::zeros(sa.0, sa.1);
        for i in 0..sa.0 {
            for j in 0..sa.1 {
                let x = av[(i, j)];
                let y = bv.as_slice()[bc.index(i, j, sb.1)];
                out[(i, j)] = match kind {
                    BinaryKind::Add => x + y,
                    BinaryKind::Sub => x - y,
                    BinaryKind::Mul => x * y,
                    BinaryKind::Div => x / clamp_denominator(y, clamp),
                };
            }
        }
        let rg = self.needs(&[a, b]);
        Ok(self.push(out, Op::Binary(kind, a, b, bc), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(a, b, BinaryKind::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(a, b, BinaryKind::Sub)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(a, b, BinaryKind::Mul)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(a, b, BinaryKind::Div)
    }

    pub fn unary(&mut self, a: Var, kind: UnaryKind) -> Result<Var> {
        let clamp = self.clamp;
        let av = self.value(a);
        let out = match kind {
            UnaryKind::Relu => av.map(|x| x.max(0.0)),
            UnaryKind::Sigmoid => av.map(sigmoid),
            UnaryKind::Exp => av.map(f64::exp),
            UnaryKind::Log => match clamp {
                Some(eps) => av.map(|x| x.max(eps).ln()),
                None => {
                    if let Some(&bad) = av.as_slice().iter().find(|&&x| x <= 0.0) {
                        return Err(Error::Domain(bad));
                    }
                    av.map(f64::ln)
                }
            },
            UnaryKind::Sqrt => av.map(|x| x.max(0.0).sqrt()),
            UnaryKind::Square => av.map(|x| x * x),
            UnaryKind::Neg => av.map(|x| -x),
        };
        let rg = self.needs(&[a]);
        Ok(self.push(out, Op::Unary(kind, a), rg))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.unary(a, UnaryKind::Relu)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary(a, UnaryKind::Sigmoid)
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.unary(a, UnaryKind::Exp)
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.unary(a, UnaryKind::Log)
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.unary(a, UnaryKind::Square)
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        self.unary(a, UnaryKind::Neg)
    }

    /// Multiplication by a fixed scalar.
    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let out = self.value(a).scale(factor);
        let rg = self.needs(&[a]);
        self.push(out, Op::Scale(a, factor), rg)
    }

    pub fn reduce(&mut self, a: Var, kind: ReduceKind) -> Var {
        let av = self.value(a);
        let (r, c) = av.shape();
        let mut argmax = Vec::new();
        let out = match kind {
            ReduceKind::Sum => Matrix::scalar(av.sum()),
            ReduceKind::Mean => Matrix::scalar(av.sum() / (r * c).max(1) as f64),
            ReduceKind::RowSum => Matrix::from_vec(r, 1, av.row_sums()).expect("row sums"),
            ReduceKind::ColSum => {
                let mut out = Matrix::zeros(1, c);
                for row in av.row_iter() {
                    for (o, x) in out.as_mut_slice().iter_mut().zip(row) {
                        *o += x;
                    }
                }
                out
            }
            ReduceKind::RowMax => {
                let mut out = Matrix::zeros(r, 1);
                for (i, row) in av.row_iter().enumerate() {
                    let mut best = 0;
                    for (j, &x) in row.iter().enumerate() {
                        if x > row[best] {
                            best = j;
                        }
                    }
                    argmax.push(best);
                    out[(i, 0)] = row.get(best).copied().unwrap_or(f64::NEG_INFINITY);
                }
                out
            }
        };
        let rg = self.needs(&[a]);
        self.push(out, Op::Reduce(kind, a, argmax), rg)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        self.reduce(a, ReduceKind::Sum)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        self.reduce(a, ReduceKind::Mean)
    }

    pub fn row_sum(&mut self, a: Var) -> Var {
        self.reduce(a, ReduceKind::RowSum)
    }

    pub fn col_sum(&mut self, a: Var) -> Var {
        self.reduce(a, ReduceKind::ColSum)
    }

    /// Row-wise softmax of `a / temperature`.
    pub fn row_softmax(&mut self, a: Var, temperature: f64) -> Result<Var> {
        if temperature.is_nan() || temperature <= 0.0 {
            return Err(Error::Config(format!(
                "softmax temperature must be positive, got {temperature}"
            )));
        }
        let mut out = self.value(a).scale(1.0 / temperature);
        let cols = out.cols();
        if cols > 0 {
            for row in out.as_mut_slice().chunks_exact_mut(cols) {
                let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for x in row.iter_mut() {
                    *x = (*x - max).exp();
                    total += *x;
                }
                for x in row.iter_mut() {
                    *x /= total;
                }
            }
        }
        let rg = self.needs(&[a]);
        Ok(self.push(out, Op::RowSoftmax(a, temperature), rg))
    }

    /// Scales each row to unit L2 norm. All-zero rows stay zero.
    pub fn row_l2_normalize(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let mut out = av.clone();
        let mut norms = Vec::with_capacity(av.rows());
        for i in 0..av.rows() {
            let row = out.row_mut(i);
            let n = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            if n > 0.0 {
                for x in row.iter_mut() {
                    *x /= n;
                }
            }
            norms.push(n);
        }
        let rg = self.needs(&[a]);
        self.push(out, Op::RowL2Normalize(a, norms), rg)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let mats: Vec<&Matrix> = parts.iter().map(|&v| self.value(v)).collect();
        let out = Matrix::hstack(&mats)?;
        let rg = self.needs(parts);
        Ok(self.push(out, Op::ConcatCols(parts.to_vec()), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = self.value(a).transpose();
        let rg = self.needs(&[a]);
        self.push(out, Op::Transpose(a), rg)
    }

    /// Reverse sweep from a 1×1 root. The tape is left untouched, so the
    /// call can be repeated and yields the same gradients.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let shape = self.shape(root);
        if shape != (1, 1) {
            return Err(Error::Contract(format!(
                "backward requires a scalar root, got {}x{}",
                shape.0, shape.1
            )));
        }
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Matrix::scalar(1.0));

        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if node.requires_grad {
                self.propagate(node, &g, &mut grads);
            }
            grads[idx] = Some(g);
        }

        let shapes = self.nodes.iter().map(|n| n.value.shape()).collect();
        Ok(Gradients { grads, shapes })
    }

    fn accumulate(&self, grads: &mut [Option<Matrix>], v: Var, g: Matrix) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot => *slot = Some(g),
        }
    }

    fn propagate(&self, node: &Node, g: &Matrix, grads: &mut [Option<Matrix>]) {
        let out = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.nodes[a.0].requires_grad {
                    self.accumulate(grads, *a, g.matmul_t(bv).expect("matmul grad"));
                }
                if self.nodes[b.0].requires_grad {
                    self.accumulate(grads, *b, av.t_matmul(g).expect("matmul grad"));
                }
            }
            Op::Binary(kind, a, b, bc) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (rows, cols) = av.shape();
                let bcols = bv.cols();
                let want_a = self.nodes[a.0].requires_grad;
                let want_b = self.nodes[b.0].requires_grad;
                let mut ga = Matrix::zeros(rows, cols);
                let mut gb = Matrix::zeros(bv.rows(), bcols);
                for i in 0..rows {
                    for j in 0..cols {
                        let gij = g[(i, j)];
                        let bi = bc.index(i, j, bcols);
                        let y = bv.as_slice()[bi];
                        let (da, db) = match kind {
                            BinaryKind::Add => (gij, gij),
                            BinaryKind::Sub => (gij, -gij),
                            BinaryKind::Mul => (gij * y, gij * av[(i, j)]),
                            BinaryKind::Div => {
                                let d = clamp_denominator(y, self.clamp);
                                let db = if d == y { -gij * av[(i, j)] / (d * d) } else { 0.0 };
                                (gij / d, db)
                            }
                        };
                        ga[(i, j)] = da;
                        gb.as_mut_slice()[bi] += db;
                    }
                }
                if want_a {
                    self.accumulate(grads, *a, ga);
                }
                if want_b {
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::Unary(kind, a) => {
                let av = self.value(*a);
                let eps = self.clamp.unwrap_or(0.0);
                let local = |x: f64, y: f64| -> f64 {
                    match kind {
                        UnaryKind::Relu => {
                            if x > 0.0 {
                                1.0
                            } else {
                                0.0
                            }
                        }
                        UnaryKind::Sigmoid => y * (1.0 - y),
                        UnaryKind::Exp => y,
                        UnaryKind::Log => {
                            if x > eps {
                                1.0 / x
                            } else {
                                0.0
                            }
                        }
                        UnaryKind::Sqrt => {
                            if y > 0.0 {
                                0.5 / y
                            } else {
                                0.0
                            }
                        }
                        UnaryKind::Square => 2.0 * x,
                        UnaryKind::Neg => -1.0,
                    }
                };
                let mut ga = g.clone();
                for ((gi, &x), &y) in ga
                    .as_mut_slice()
                    .iter_mut()
                    .zip(av.as_slice())
                    .zip(out.as_slice())
                {
                    *gi *= local(x, y);
                }
                self.accumulate(grads, *a, ga);
            }
            Op::Scale(a, factor) => self.accumulate(grads, *a, g.scale(*factor)),
            Op::Reduce(kind, a, argmax) => {
                let (r, c) = self.shape(*a);
                let ga = match kind {
                    ReduceKind::Sum => Matrix::filled(r, c, g[(0, 0)]),
                    ReduceKind::Mean => Matrix::filled(r, c, g[(0, 0)] / (r * c).max(1) as f64),
                    ReduceKind::RowSum => Matrix::from_fn(r, c, |i, _| g[(i, 0)]),
                    ReduceKind::ColSum => Matrix::from_fn(r, c, |_, j| g[(0, j)]),
                    ReduceKind::RowMax => {
                        let mut ga = Matrix::zeros(r, c);
                        for (i, &j) in argmax.iter().enumerate() {
                            ga[(i, j)] = g[(i, 0)];
                        }
                        ga
                    }
                };
                self.accumulate(grads, *a, ga);
            }
            Op::RowSoftmax(a, temperature) => {
                let mut ga = Matrix::zeros(out.rows(), out.cols());
                for i in 0..out.rows() {
                    let (y, gr) = (out.row(i), g.row(i));
                    let dot: f64 = y.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for (j, o) in ga.row_mut(i).iter_mut().enumerate() {
                        *o = y[j] * (gr[j] - dot) / temperature;
                    }
                }
                self.accumulate(grads, *a, ga);
            }
            Op::RowL2Normalize(a, norms) => {
                let mut ga = Matrix::zeros(out.rows(), out.cols());
                for (i, &n) in norms.iter().enumerate() {
                    if n == 0.0 {
                        continue;
                    }
                    let (y, gr) = (out.row(i), g.row(i));
                    let dot: f64 = y.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for (j, o) in ga.row_mut(i).iter_mut().enumerate() {
                        *o = (gr[j] - y[j] * dot) / n;
                    }
                }
                self.accumulate(grads, *a, ga);
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for p in parts {
                    let (r, c) = self.shape(*p);
                    if self.nodes[p.0].requires_grad {
                        let gp = Matrix::from_fn(r, c, |i, j| g[(i, offset + j)]);
                        self.accumulate(grads, *p, gp);
                    }
                    offset += c;
                }
            }
            Op::Transpose(a) => self.accumulate(grads, *a, g.transpose()),
        }
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
fn clamp_denominator(y: f64, clamp: Option<f64>) -> f64 {
    match clamp {
        Some(eps) if y.abs() < eps => {
            if y < 0.0 {
                -eps
            } else {
                eps
            }
        }
        _ => y,
    }
}

/// Gradients of a scalar root with respect to every node on the tape.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    /// Gradient of `v`; all-zero when `v` does not reach the root.
    pub fn get(&self, v: Var) -> Matrix {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shapes[v.0];
                Matrix::zeros(r, c)
            }
        }
    }

    pub fn wrt(&self, v: Var) -> Option<&Matrix> {
        self.grads[v.0].as_ref()
    }
}
