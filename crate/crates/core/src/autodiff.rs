//! Reverse-mode differentiation over 2-D arrays.
//!
//! A [`Graph`] records operations as they run. Parameters are borrowed from
//! a [`ParamSet`] rather than copied; [`Graph::backward`] returns one
//! gradient slot per parameter, `None` for parameters the output does not
//! depend on. Loss terms enter as scalar nodes whose gradient with respect
//! to their input was computed alongside the value.

use std::collections::HashMap;

use ndarray::{s, Array1, Array2, ArrayView2, Axis};

use crate::model::ParamSet;
use crate::real::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Op<F> {
    Leaf,
    Param(usize),
    MatMul(Var, Var),
    /// `a . b^T`
    MatMulNT(Var, Var),
    Add(Var, Var),
    /// `[m, n] + [1, n]`
    AddRow(Var, Var),
    Scale(Var, F),
    Relu(Var),
    Gelu(Var),
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Array2<F>, rstd: Array1<F> },
    Softmax(Var),
    SliceCols(Var, usize),
    SliceRows(Var, usize),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    RepeatRows(Var),
    Reshape(Var),
    CumSumRows(Var),
    Scalar { input: Var, grad: Array2<F> },
    WeightedSum(Vec<(Var, F)>),
}

struct Node<F> {
    op: Op<F>,
    value: Option<Array2<F>>,
}

pub struct Graph<'p, F: Real> {
    params: &'p ParamSet<F>,
    nodes: Vec<Node<F>>,
    param_nodes: HashMap<usize, Var>,
}

/// Per-parameter gradients, aligned with the parameter set's order.
pub type ParamGrads<F> = Vec<Option<Array2<F>>>;

const GELU_K: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_C: f64 = 0.044_715;

impl<'p, F: Real> Graph<'p, F> {
    pub fn new(params: &'p ParamSet<F>) -> Self {
        Self { params, nodes: Vec::with_capacity(256), param_nodes: HashMap::new() }
    }

    fn push(&mut self, op: Op<F>, value: Option<Array2<F>>) -> Var {
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> ArrayView2<'_, F> {
        let node = &self.nodes[v.0];
        match (&node.op, &node.value) {
            (Op::Param(pid), _) => self.params.tensor(*pid).view(),
            (_, Some(val)) => val.view(),
            _ => unreachable!("non-parameter node without a value"),
        }
    }

    pub fn scalar(&self, v: Var) -> F {
        self.value(v)[[0, 0]]
    }

    pub fn input(&mut self, value: Array2<F>) -> Var {
        self.push(Op::Leaf, Some(value))
    }

    /// Parameter by name. Panics on an unknown name: parameter names are
    /// fixed by the architecture, so a miss is a programming error.
    pub fn param(&mut self, name: &str) -> Var {
        let pid = self
            .params
            .index_of(name)
            .unwrap_or_else(|| panic!("unknown parameter `{name}`"));
        if let Some(&v) = self.param_nodes.get(&pid) {
            return v;
        }
        let v = self.push(Op::Param(pid), None);
        self.param_nodes.insert(pid, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).dot(&self.value(b));
        self.push(Op::MatMul(a, b), Some(out))
    }

    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).dot(&self.value(b).t());
        self.push(Op::MatMulNT(a, b), Some(out))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let out = &self.value(a) + &self.value(b);
        self.push(Op::Add(a, b), Some(out))
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let out = &self.value(a) + &self.value(row);
        self.push(Op::AddRow(a, row), Some(out))
    }

    /// `x . w + b`
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Var {
        let xw = self.matmul(x, w);
        self.add_row(xw, b)
    }

    pub fn scale(&mut self, a: Var, s: F) -> Var {
        let out = self.value(a).mapv(|v| v * s);
        self.push(Op::Scale(a, s), Some(out))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(|v| if v > F::zero() { v } else { F::zero() });
        self.push(Op::Relu(a), Some(out))
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let (k, c, half) = (F::lit(GELU_K), F::lit(GELU_C), F::lit(0.5));
        let out = self.value(a).mapv(|x| half * x * (F::one() + (k * (x + c * x * x * x)).tanh()));
        self.push(Op::Gelu(a), Some(out))
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: F) -> Var {
        let xv = self.value(x);
        let n = F::from_usize(xv.ncols()).expect("width fits");
        let mut xhat = Array2::zeros(xv.raw_dim());
        let mut rstd = Array1::zeros(xv.nrows());
        for (i, row) in xv.rows().into_iter().enumerate() {
            let mean = row.sum() / n;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>() / n;
            let r = F::one() / (var + eps).sqrt();
            rstd[i] = r;
            xhat.row_mut(i).assign(&row.mapv(|v| (v - mean) * r));
        }
        let out = &(&xhat * &self.value(gamma)) + &self.value(beta);
        self.push(Op::LayerNorm { x, gamma, beta, xhat, rstd }, Some(out))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let mut out = self.value(a).to_owned();
        for mut row in out.rows_mut() {
            let m = row.iter().copied().fold(F::neg_infinity(), F::max);
            row.mapv_inplace(|v| (v - m).exp());
            let s = row.sum();
            row.mapv_inplace(|v| v / s);
        }
        self.push(Op::Softmax(a), Some(out))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let out = self.value(a).slice(s![.., start..start + len]).to_owned();
        self.push(Op::SliceCols(a, start), Some(out))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let out = self.value(a).slice(s![start..start + len, ..]).to_owned();
        self.push(Op::SliceRows(a, start), Some(out))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<ArrayView2<F>> = parts.iter().map(|&p| self.value(p)).collect();
        let out = ndarray::concatenate(Axis(1), &views).expect("row counts agree");
        self.push(Op::ConcatCols(parts.to_vec()), Some(out))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let views: Vec<ArrayView2<F>> = parts.iter().map(|&p| self.value(p)).collect();
        let out = ndarray::concatenate(Axis(0), &views).expect("column counts agree");
        self.push(Op::ConcatRows(parts.to_vec()), Some(out))
    }

    /// `[1, n] -> [m, n]`
    pub fn repeat_rows(&mut self, a: Var, m: usize) -> Var {
        let row = self.value(a);
        assert_eq!(row.nrows(), 1, "repeat_rows expects a single row");
        let out = row.broadcast((m, row.ncols())).expect("broadcastable").to_owned();
        self.push(Op::RepeatRows(a), Some(out))
    }

    /// Row-major reshape.
    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Var {
        let out = self
            .value(a)
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((rows, cols))
            .expect("element count preserved");
        self.push(Op::Reshape(a), Some(out))
    }

    /// Running sum down the rows.
    pub fn cumsum_rows(&mut self, a: Var) -> Var {
        let mut out = self.value(a).to_owned();
        for i in 1..out.nrows() {
            let prev = out.row(i - 1).to_owned();
            let mut row = out.row_mut(i);
            row += &prev;
        }
        self.push(Op::CumSumRows(a), Some(out))
    }

    /// Scalar node with a precomputed gradient `d value / d input`.
    pub fn scalar_fn(&mut self, input: Var, value: F, grad: Array2<F>) -> Var {
        debug_assert_eq!(grad.dim(), self.value(input).dim());
        self.push(Op::Scalar { input, grad }, Some(Array2::from_elem((1, 1), value)))
    }

    /// `sum_i w_i * s_i` over scalar nodes.
    pub fn weighted_sum(&mut self, terms: &[(Var, F)]) -> Var {
        let total = terms.iter().fold(F::zero(), |acc, &(v, w)| acc + w * self.scalar(v));
        self.push(Op::WeightedSum(terms.to_vec()), Some(Array2::from_elem((1, 1), total)))
    }

    /// Gradients of the scalar `root` with respect to every parameter.
    pub fn backward(&self, root: Var) -> ParamGrads<F> {
        let mut grads: Vec<Option<Array2<F>>> = Vec::new();
        grads.resize_with(root.0 + 1, || None);
        grads[root.0] = Some(Array2::ones((1, 1)));
        let mut out: ParamGrads<F> = vec![None; self.params.len()];

        fn acc<F: Real>(grads: &mut [Option<Array2<F>>], v: Var, g: Array2<F>) {
            match &mut grads[v.0] {
                Some(existing) => *existing += &g,
                slot @ None => *slot = Some(g),
            }
        }

        for idx in (0..=root.0).rev() {
            let Some(gy) = grads[idx].take() else { continue };
            match &self.nodes[idx].op {
                Op::Leaf => {}
                Op::Param(pid) => match &mut out[*pid] {
                    Some(existing) => *existing += &gy,
                    slot @ None => *slot = Some(gy),
                },
                Op::MatMul(a, b) => {
                    let ga = gy.dot(&self.value(*b).t());
                    let gb = self.value(*a).t().dot(&gy);
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::MatMulNT(a, b) => {
                    let ga = gy.dot(&self.value(*b));
                    let gb = gy.t().dot(&self.value(*a));
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *b, gy.clone());
                    acc(&mut grads, *a, gy);
                }
                Op::AddRow(a, row) => {
                    acc(&mut grads, *row, gy.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    acc(&mut grads, *a, gy);
                }
                Op::Scale(a, s) => acc(&mut grads, *a, gy.mapv(|v| v * *s)),
                Op::Relu(a) => {
                    let mut g = gy;
                    ndarray::Zip::from(&mut g).and(self.value(*a)).for_each(|g, &x| {
                        if x <= F::zero() {
                            *g = F::zero();
                        }
                    });
                    acc(&mut grads, *a, g);
                }
                Op::Gelu(a) => {
                    let (k, c, half, three) = (F::lit(GELU_K), F::lit(GELU_C), F::lit(0.5), F::lit(3.0));
                    let mut g = gy;
                    ndarray::Zip::from(&mut g).and(self.value(*a)).for_each(|g, &x| {
                        let t = (k * (x + c * x * x * x)).tanh();
                        let d = half * (F::one() + t) + half * x * (F::one() - t * t) * k * (F::one() + three * c * x * x);
                        *g = *g * d;
                    });
                    acc(&mut grads, *a, g);
                }
                Op::LayerNorm { x, gamma, beta, xhat, rstd } => {
                    acc(&mut grads, *beta, gy.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    acc(&mut grads, *gamma, (&gy * xhat).sum_axis(Axis(0)).insert_axis(Axis(0)));
                    let dxhat = &gy * &self.value(*gamma);
                    let n = F::from_usize(xhat.ncols()).expect("width fits");
                    let mut dx = Array2::zeros(xhat.raw_dim());
                    for i in 0..xhat.nrows() {
                        let dh = dxhat.row(i);
                        let xh = xhat.row(i);
                        let mean_dh = dh.sum() / n;
                        let mean_dh_xh = dh.iter().zip(xh.iter()).map(|(&a, &b)| a * b).sum::<F>() / n;
                        let r = rstd[i];
                        for j in 0..xhat.ncols() {
                            dx[[i, j]] = r * (dh[j] - mean_dh - xh[j] * mean_dh_xh);
                        }
                    }
                    acc(&mut grads, *x, dx);
                }
                Op::Softmax(a) => {
                    let y = self.nodes[idx].value.as_ref().expect("softmax value");
                    let mut g = gy;
                    for (mut grow, yrow) in g.rows_mut().into_iter().zip(y.rows()) {
                        let dot = grow.iter().zip(yrow.iter()).map(|(&a, &b)| a * b).sum::<F>();
                        grow.zip_mut_with(&yrow, |gv, &yv| *gv = yv * (*gv - dot));
                    }
                    acc(&mut grads, *a, g);
                }
                Op::SliceCols(a, start) => {
                    let mut g = Array2::zeros(self.value(*a).raw_dim());
                    g.slice_mut(s![.., *start..*start + gy.ncols()]).assign(&gy);
                    acc(&mut grads, *a, g);
                }
                Op::SliceRows(a, start) => {
                    let mut g = Array2::zeros(self.value(*a).raw_dim());
                    g.slice_mut(s![*start..*start + gy.nrows(), ..]).assign(&gy);
                    acc(&mut grads, *a, g);
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let w = self.value(p).ncols();
                        acc(&mut grads, p, gy.slice(s![.., off..off + w]).to_owned());
                        off += w;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let h = self.value(p).nrows();
                        acc(&mut grads, p, gy.slice(s![off..off + h, ..]).to_owned());
                        off += h;
                    }
                }
                Op::RepeatRows(a) => acc(&mut grads, *a, gy.sum_axis(Axis(0)).insert_axis(Axis(0))),
                Op::Reshape(a) => {
                    let dim = self.value(*a).dim();
                    let g = gy.into_shape_with_order(dim).expect("element count preserved");
                    acc(&mut grads, *a, g);
                }
                Op::CumSumRows(a) => {
                    let mut g = gy;
                    for i in (0..g.nrows().saturating_sub(1)).rev() {
                        let next = g.row(i + 1).to_owned();
                        let mut row = g.row_mut(i);
                        row += &next;
                    }
                    acc(&mut grads, *a, g);
                }
                Op::Scalar { input, grad } => {
                    let up = gy[[0, 0]];
                    acc(&mut grads, *input, grad.mapv(|v| v * up));
                }
                Op::WeightedSum(terms) => {
                    let up = gy[[0, 0]];
                    for &(v, w) in terms {
                        acc(&mut grads, v, Array2::from_elem((1, 1), w * up));
                    }
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_array(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Array2<f64> {
        Array2::from_shape_fn((r, c), |_| rng.random_range(-1.0..1.0))
    }

    /// Checks d(sum(f(params) * weights))/d params against central differences.
    fn check<Fn>(shapes: &[(&str, (usize, usize))], build: Fn)
    where
        Fn: for<'a> std::ops::Fn(&mut Graph<'a, f64>) -> Var,
    {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut params = ParamSet::new();
        for (name, (r, c)) in shapes {
            params.push(*name, rand_array(&mut rng, *r, *c));
        }
        // Project onto fixed random weights so every output entry matters.
        let eval = |p: &ParamSet<f64>| -> (f64, ParamGrads<f64>) {
            let mut g = Graph::new(p);
            let out = build(&mut g);
            let val = g.value(out).to_owned();
            let mut wrng = ChaCha8Rng::seed_from_u64(99);
            let w = rand_array(&mut wrng, val.nrows(), val.ncols());
            let loss = (&val * &w).sum();
            let s = g.scalar_fn(out, loss, w);
            (loss, g.backward(s))
        };
        let (_, grads) = eval(&params);
        let h = 1e-6;
        for pid in 0..params.len() {
            let analytic = grads[pid].clone().unwrap_or_else(|| Array2::zeros(params.tensor(pid).raw_dim()));
            for idx in 0..params.tensor(pid).len() {
                let mut plus = params.clone();
                let mut minus = params.clone();
                let (r, c) = (idx / params.tensor(pid).ncols(), idx % params.tensor(pid).ncols());
                plus.tensor_mut(pid)[[r, c]] += h;
                minus.tensor_mut(pid)[[r, c]] -= h;
                let num = (eval(&plus).0 - eval(&minus).0) / (2.0 * h);
                let a = analytic[[r, c]];
                let rel = (a - num).abs() / a.abs().max(num.abs()).max(1e-6);
                assert!(rel < 1e-5, "{}[{r},{c}]: analytic {a} numeric {num}", params.name(pid));
            }
        }
    }

    #[test]
    fn matmul_family() {
        check(&[("a", (3, 4)), ("b", (4, 2)), ("c", (5, 4))], |g| {
            let (a, b, c) = (g.param("a"), g.param("b"), g.param("c"));
            let ab = g.matmul(a, b);
            let act = g.matmul_nt(a, c);
            let both = g.concat_cols(&[ab, act]);
            g.scale(both, 0.7)
        });
    }

    #[test]
    fn activations_and_norms() {
        check(&[("x", (3, 5)), ("gamma", (1, 5)), ("beta", (1, 5)), ("bias", (1, 5))], |g| {
            let (x, gm, bt, b) = (g.param("x"), g.param("gamma"), g.param("beta"), g.param("bias"));
            let ln = g.layer_norm(x, gm, bt, 1e-5);
            let z = g.add_row(ln, b);
            let ge = g.gelu(z);
            let sm = g.softmax_rows(ge);
            let r = g.relu(x);
            g.add(sm, r)
        });
    }

    #[test]
    fn shape_ops() {
        check(&[("a", (1, 6)), ("b", (2, 6)), ("c", (3, 2))], |g| {
            let (a, b, c) = (g.param("a"), g.param("b"), g.param("c"));
            let rep = g.repeat_rows(a, 2);
            let sum = g.add(rep, b);
            let rows = g.concat_rows(&[a, sum]);
            let sl = g.slice_rows(rows, 1, 2);
            let sc = g.slice_cols(sl, 2, 3);
            let re = g.reshape(sc, 3, 2);
            let cs = g.cumsum_rows(re);
            g.add(cs, c)
        });
    }

    #[test]
    fn shared_parameter_accumulates() {
        let mut params = ParamSet::new();
        params.push("w", Array2::from_elem((1, 1), 3.0f64));
        let mut g = Graph::new(&params);
        let w = g.param("w");
        let w2 = g.param("w");
        assert_eq!(w, w2);
        let sq = g.matmul(w, w2);
        let total = g.weighted_sum(&[(sq, 1.0)]);
        let grads = g.backward(total);
        assert_eq!(grads[0].as_ref().unwrap()[[0, 0]], 6.0);
    }

    #[test]
    fn unreachable_parameters_get_none() {
        let mut params = ParamSet::new();
        params.push("used", Array2::from_elem((1, 1), 2.0f64));
        params.push("unused", Array2::from_elem((1, 1), 5.0f64));
        let mut g = Graph::new(&params);
        let u = g.param("used");
        let _ = g.param("unused");
        let out = g.weighted_sum(&[(u, 2.0)]);
        let grads = g.backward(out);
        assert_eq!(grads[0].as_ref().unwrap()[[0, 0]], 2.0);
        assert!(grads[1].is_none());
    }
}
