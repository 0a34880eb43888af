//! Reverse-mode differentiation over row-batched matrices.
//!
//! Nodes are appended in evaluation order; [`Tape::backward`] walks them in
//! reverse. Only nodes reachable from a trainable leaf carry gradients, so
//! frozen networks cost a plain forward pass plus whatever input gradient
//! flows through them.

use ndarray::{Array1, Array2, Axis};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    AddBias(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    ScaleRows(usize, Array1<f64>),
    Scale(usize, f64),
    Silu(usize),
    Tanh(usize),
    ConcatCols(Vec<usize>),
    Square(usize),
    SumAll(usize),
    /// `max(log σ(sign·z), floor_ln)`
    LogSigmoid { z: usize, sign: f64, floor_ln: f64 },
}

#[derive(Debug)]
struct Node {
    value: Array2<f64>,
    op: Op,
    needs_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Array2<f64>>>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log σ(x)` without overflow.
fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Array2<f64>, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Leaf whose gradient is collected by [`Tape::backward`].
    pub fn param(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[[0, 0]]
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).dot(self.value(b));
        let ng = self.needs(a) || self.needs(b);
        self.push(value, Op::MatMul(a.0, b.0), ng)
    }

    /// `a + bias` with a `1 × m` bias broadcast over rows.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Var {
        let value = self.value(a) + self.value(bias);
        let ng = self.needs(a) || self.needs(bias);
        self.push(value, Op::AddBias(a.0, bias.0), ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) + self.value(b);
        let ng = self.needs(a) || self.needs(b);
        self.push(value, Op::Add(a.0, b.0), ng)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) - self.value(b);
        let ng = self.needs(a) || self.needs(b);
        self.push(value, Op::Sub(a.0, b.0), ng)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) * self.value(b);
        let ng = self.needs(a) || self.needs(b);
        self.push(value, Op::Mul(a.0, b.0), ng)
    }

    /// Multiplies row `i` by the constant `factors[i]`.
    pub fn scale_rows(&mut self, a: Var, factors: Array1<f64>) -> Var {
        let value = self.value(a) * &factors.view().insert_axis(Axis(1));
        let ng = self.needs(a);
        self.push(value, Op::ScaleRows(a.0, factors), ng)
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let value = self.value(a) * k;
        let ng = self.needs(a);
        self.push(value, Op::Scale(a.0, k), ng)
    }

    pub fn silu(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(|x| x * sigmoid(x));
        let ng = self.needs(a);
        self.push(value, Op::Silu(a.0), ng)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(f64::tanh);
        let ng = self.needs(a);
        self.push(value, Op::Tanh(a.0), ng)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|p| self.value(*p).view()).collect();
        let value = ndarray::concatenate(Axis(1), &views).expect("row counts must agree");
        let ng = parts.iter().any(|p| self.needs(*p));
        self.push(value, Op::ConcatCols(parts.iter().map(|p| p.0).collect()), ng)
    }

    pub fn square(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(|x| x * x);
        let ng = self.needs(a);
        self.push(value, Op::Square(a.0), ng)
    }

    /// Sum of all entries as a `1 × 1` node.
    pub fn sum_all(&mut self, a: Var) -> Var {
        let value = Array2::from_elem((1, 1), self.value(a).sum());
        let ng = self.needs(a);
        self.push(value, Op::SumAll(a.0), ng)
    }

    /// Mean over rows of the squared row norm of `a − b`.
    pub fn mean_sq_dist(&mut self, a: Var, b: Var) -> Var {
        let rows = self.value(a).nrows().max(1) as f64;
        let d = self.sub(a, b);
        let sq = self.square(d);
        let s = self.sum_all(sq);
        self.scale(s, 1.0 / rows)
    }

    /// Elementwise `max(log σ(sign·z), log floor)`; `sign = −1` gives
    /// `log(1 − σ(z))`.
    pub fn log_sigmoid_clamped(&mut self, z: Var, sign: f64, floor: f64) -> Var {
        let floor_ln = floor.ln();
        let value = self.value(z).mapv(|v| log_sigmoid(sign * v).max(floor_ln));
        let ng = self.needs(z);
        self.push(value, Op::LogSigmoid { z: z.0, sign, floor_ln }, ng)
    }

    fn accumulate(&mut self, idx: usize, g: Array2<f64>) {
        if !self.nodes[idx].needs_grad {
            return;
        }
        match &mut self.grads[idx] {
            Some(acc) => *acc += &g,
            slot @ None => *slot = Some(g),
        }
    }

    /// Back-propagates from the scalar `root`, seeding `d root = 1`.
    pub fn backward(&mut self, root: Var) {
        self.grads = vec![None; self.nodes.len()];
        let shape = self.value(root).raw_dim();
        self.grads[root.0] = Some(Array2::ones(shape));
        for i in (0..=root.0).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let Some(g) = self.grads[i].take() else { continue };
            match &self.nodes[i].op {
                Op::Leaf => {}
                &Op::MatMul(a, b) => {
                    if self.nodes[a].needs_grad {
                        let ga = g.dot(&self.nodes[b].value.t());
                        self.accumulate(a, ga);
                    }
                    if self.nodes[b].needs_grad {
                        let gb = self.nodes[a].value.t().dot(&g);
                        self.accumulate(b, gb);
                    }
                }
                &Op::AddBias(a, b) => {
                    let gb = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    self.accumulate(b, gb);
                    self.accumulate(a, g.clone());
                }
                &Op::Add(a, b) => {
                    self.accumulate(b, g.clone());
                    self.accumulate(a, g.clone());
                }
                &Op::Sub(a, b) => {
                    self.accumulate(b, -&g);
                    self.accumulate(a, g.clone());
                }
                &Op::Mul(a, b) => {
                    let ga = &g * &self.nodes[b].value;
                    let gb = &g * &self.nodes[a].value;
                    self.accumulate(a, ga);
                    self.accumulate(b, gb);
                }
                Op::ScaleRows(a, f) => {
                    let ga = &g * &f.view().insert_axis(Axis(1));
                    let a = *a;
                    self.accumulate(a, ga);
                }
                &Op::Scale(a, k) => self.accumulate(a, &g * k),
                &Op::Silu(a) => {
                    let mut ga = g.clone();
                    ga.zip_mut_with(&self.nodes[a].value, |gv, &x| {
                        let s = sigmoid(x);
                        *gv *= s * (1.0 + x * (1.0 - s));
                    });
                    self.accumulate(a, ga);
                }
                &Op::Tanh(a) => {
                    let mut ga = g.clone();
                    ga.zip_mut_with(&self.nodes[i].value, |gv, &y| *gv *= 1.0 - y * y);
                    self.accumulate(a, ga);
                }
                Op::ConcatCols(parts) => {
                    let parts = parts.clone();
                    let mut col = 0;
                    for p in parts {
                        let w = self.nodes[p].value.ncols();
                        let gp = g.slice(ndarray::s![.., col..col + w]).to_owned();
                        self.accumulate(p, gp);
                        col += w;
                    }
                }
                &Op::Square(a) => {
                    let ga = &g * &self.nodes[a].value * 2.0;
                    self.accumulate(a, ga);
                }
                &Op::SumAll(a) => {
                    let gv = g[[0, 0]];
                    let shape = self.nodes[a].value.raw_dim();
                    self.accumulate(a, Array2::from_elem(shape, gv));
                }
                &Op::LogSigmoid { z, sign, floor_ln } => {
                    let mut gz = g.clone();
                    let zv = &self.nodes[z].value;
                    ndarray::Zip::from(&mut gz).and(zv).for_each(|gv, &zz| {
                        if log_sigmoid(sign * zz) < floor_ln {
                            *gv = 0.0;
                        } else {
                            *gv *= sign * (1.0 - sigmoid(sign * zz));
                        }
                    });
                    self.accumulate(z, gz);
                }
            }
            self.grads[i] = Some(g);
        }
    }

    pub fn grad(&self, v: Var) -> Option<&Array2<f64>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }
}
