//! Reverse-mode automatic differentiation over dense `f64` matrices.
//!
//! A [`Tape`] records values in evaluation order; [`Tape::backward`] walks it
//! in reverse from a seed gradient. Parameters are referenced by index into
//! the caller's parameter list so gradients can be accumulated per name.

use std::sync::Arc;

use ndarray::{Array2, Axis, Zip};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Linear map applied on the right, `y = x S`, stored column-wise: output
/// column `m` is `sum_k w_k * x[:, n_k]` over `cols[m]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseMap {
    pub inputs: usize,
    pub cols: Vec<Vec<(usize, f64)>>,
}

impl SparseMap {
    pub fn outputs(&self) -> usize {
        self.cols.len()
    }

    pub fn apply(&self, x: &Array2<f64>) -> Array2<f64> {
        assert_eq!(x.ncols(), self.inputs, "sparse map input width");
        let mut out = Array2::zeros((x.nrows(), self.outputs()));
        Zip::from(out.rows_mut())
            .and(x.rows())
            .for_each(|mut o, xr| {
                for (m, col) in self.cols.iter().enumerate() {
                    let mut acc = 0.0;
                    for &(n, w) in col {
                        acc += w * xr[n];
                    }
                    o[m] = acc;
                }
            });
        out
    }

    fn apply_transpose(&self, g: &Array2<f64>) -> Array2<f64> {
        let mut out = Array2::zeros((g.nrows(), self.inputs));
        Zip::from(out.rows_mut())
            .and(g.rows())
            .for_each(|mut o, gr| {
                for (m, col) in self.cols.iter().enumerate() {
                    let gm = gr[m];
                    if gm != 0.0 {
                        for &(n, w) in col {
                            o[n] += w * gm;
                        }
                    }
                }
            });
        out
    }

    /// Dense form, for tests.
    pub fn to_dense(&self) -> Array2<f64> {
        let mut d = Array2::zeros((self.inputs, self.outputs()));
        for (m, col) in self.cols.iter().enumerate() {
            for &(n, w) in col {
                d[(n, m)] += w;
            }
        }
        d
    }
}

/// Index gather: flat output element `i` copies flat input element
/// `index[i]`, or is zero when `index[i] == GATHER_ZERO`.
#[derive(Clone, Debug, PartialEq)]
pub struct GatherMap {
    pub shape: (usize, usize),
    pub index: Vec<u32>,
}

pub const GATHER_ZERO: u32 = u32::MAX;

impl GatherMap {
    pub fn apply(&self, x: &Array2<f64>) -> Array2<f64> {
        let src = x.as_slice().expect("standard layout");
        let data = self
            .index
            .iter()
            .map(|&i| {
                if i == GATHER_ZERO {
                    0.0
                } else {
                    src[i as usize]
                }
            })
            .collect();
        Array2::from_shape_vec(self.shape, data).unwrap()
    }

    fn scatter(&self, g: &Array2<f64>, input_shape: (usize, usize)) -> Array2<f64> {
        let mut out = Array2::<f64>::zeros(input_shape);
        let dst = out.as_slice_mut().unwrap();
        let gs = g.as_standard_layout();
        for (&i, &v) in self.index.iter().zip(gs.iter()) {
            if i != GATHER_ZERO {
                dst[i as usize] += v;
            }
        }
        out
    }
}

#[derive(Clone, Debug)]
enum Op {
    Const,
    Param(usize),
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    AddCol(Var, Var),
    Scale(Var, f64),
    Silu(Var),
    Gather(Var, Arc<GatherMap>),
    Sparse(Var, Arc<SparseMap>),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SoftmaxRows(Var),
}

#[derive(Debug)]
struct Node {
    value: Array2<f64>,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients keyed by parameter index; `None` for unreached parameters.
#[derive(Clone, Debug)]
pub struct ParamGrads(pub Vec<Option<Array2<f64>>>);

fn std_layout(a: Array2<f64>) -> Array2<f64> {
    if a.is_standard_layout() {
        a
    } else {
        a.as_standard_layout().into_owned()
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Array2<f64>, op: Op) -> Var {
        self.nodes.push(Node {
            value: std_layout(value),
            op,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.dim()
    }

    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Const)
    }

    pub fn param(&mut self, index: usize, value: &Array2<f64>) -> Var {
        self.push(value.clone(), Op::Param(index))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = self.value(a).t().to_owned();
        self.push(v, Op::Transpose(a))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "add shapes");
        let v = self.value(a) + self.value(b);
        self.push(v, Op::Add(a, b))
    }

    /// `x + b` with a column vector `b` broadcast across columns.
    pub fn add_col(&mut self, x: Var, b: Var) -> Var {
        let (rows, _) = self.shape(x);
        assert_eq!(self.shape(b), (rows, 1), "bias shape");
        let v = self.value(x) + self.value(b);
        self.push(v, Op::AddCol(x, b))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let v = self.value(x) * s;
        self.push(v, Op::Scale(x, s))
    }

    pub fn silu(&mut self, x: Var) -> Var {
        let v = self.value(x).mapv(|z| z * sigmoid(z));
        self.push(v, Op::Silu(x))
    }

    pub fn gather(&mut self, x: Var, map: &Arc<GatherMap>) -> Var {
        let v = map.apply(self.value(x));
        self.push(v, Op::Gather(x, Arc::clone(map)))
    }

    pub fn sparse(&mut self, x: Var, map: &Arc<SparseMap>) -> Var {
        let v = map.apply(self.value(x));
        self.push(v, Op::Sparse(x, Arc::clone(map)))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let v = ndarray::concatenate(Axis(0), &views).expect("concat_rows widths");
        self.push(v, Op::ConcatRows(parts.to_vec()))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let v = ndarray::concatenate(Axis(1), &views).expect("concat_cols heights");
        self.push(v, Op::ConcatCols(parts.to_vec()))
    }

    /// Row-wise softmax, shifted by the row max.
    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let mut v = self.value(x).clone();
        for mut row in v.rows_mut() {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            row.mapv_inplace(|z| (z - max).exp());
            let sum = row.sum();
            row /= sum;
        }
        self.push(v, Op::SoftmaxRows(x))
    }

    /// Backpropagates `seed` from `root` and returns per-parameter gradients
    /// for `num_params` parameters.
    pub fn backward(&self, root: Var, seed: Array2<f64>, num_params: usize) -> ParamGrads {
        assert_eq!(seed.dim(), self.shape(root), "seed shape");
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; root.0 + 1];
        grads[root.0] = Some(seed);
        let mut params: Vec<Option<Array2<f64>>> = vec![None; num_params];

        fn acc(slot: &mut Option<Array2<f64>>, g: Array2<f64>) {
            match slot {
                Some(s) => *s += &g,
                None => *slot = Some(g),
            }
        }

        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Const => {}
                Op::Param(p) => acc(&mut params[*p], g),
                Op::MatMul(a, b) => {
                    let ga = g.dot(&self.value(*b).t());
                    let gb = self.value(*a).t().dot(&g);
                    acc(&mut grads[a.0], ga);
                    acc(&mut grads[b.0], gb);
                }
                Op::Transpose(a) => acc(&mut grads[a.0], std_layout(g.reversed_axes())),
                Op::Add(a, b) => {
                    acc(&mut grads[b.0], g.clone());
                    acc(&mut grads[a.0], g);
                }
                Op::AddCol(x, b) => {
                    let gb = g.sum_axis(Axis(1)).insert_axis(Axis(1));
                    acc(&mut grads[b.0], gb);
                    acc(&mut grads[x.0], g);
                }
                Op::Scale(x, s) => acc(&mut grads[x.0], g * *s),
                Op::Silu(x) => {
                    let mut gx = g;
                    Zip::from(&mut gx).and(self.value(*x)).for_each(|gv, &z| {
                        let s = sigmoid(z);
                        *gv *= s * (1.0 + z * (1.0 - s));
                    });
                    acc(&mut grads[x.0], gx);
                }
                Op::Gather(x, map) => {
                    let gx = map.scatter(&g, self.shape(*x));
                    acc(&mut grads[x.0], gx);
                }
                Op::Sparse(x, map) => acc(&mut grads[x.0], map.apply_transpose(&g)),
                Op::ConcatRows(parts) => {
                    let mut start = 0;
                    for p in parts {
                        let n = self.shape(*p).0;
                        acc(
                            &mut grads[p.0],
                            g.slice(ndarray::s![start..start + n, ..]).to_owned(),
                        );
                        start += n;
                    }
                }
                Op::ConcatCols(parts) => {
                    let mut start = 0;
                    for p in parts {
                        let n = self.shape(*p).1;
                        acc(
                            &mut grads[p.0],
                            g.slice(ndarray::s![.., start..start + n]).to_owned(),
                        );
                        start += n;
                    }
                }
                Op::SoftmaxRows(x) => {
                    let y = &node.value;
                    let mut gx = g;
                    Zip::from(gx.rows_mut())
                        .and(y.rows())
                        .for_each(|mut gr, yr| {
                            let dot: f64 = gr.iter().zip(yr.iter()).map(|(a, b)| a * b).sum();
                            Zip::from(&mut gr)
                                .and(&yr)
                                .for_each(|gv, &yv| *gv = yv * (*gv - dot));
                        });
                    acc(&mut grads[x.0], gx);
                }
            }
        }
        ParamGrads(params)
    }
}
