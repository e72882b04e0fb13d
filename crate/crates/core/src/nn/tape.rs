//! Reverse-mode tape over row-major matrices.
//!
//! Every operation appends a node holding its value; [`Tape::backward`]
//! walks the nodes in reverse and accumulates gradients into the parents.
//! Parameters are read from a borrowed [`ParamStore`] without copying.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::tensor::{ParamId, ParamStore, Tensor};
use crate::math::exp;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Leaf,
    Param(ParamId),
    Linear { x: usize, w: usize, b: Option<usize> },
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    AddRow { x: usize, v: usize },
    Scale { x: usize, c: f64 },
    Relu(usize),
    ConcatCols(usize, usize),
    GatherRows { x: usize, idx: Vec<usize> },
    MeanScatter { x: usize, dst: Vec<usize>, inv: Vec<f64> },
    OuterConst { v: usize, s: Vec<f64> },
    PairSum { a: usize, b: usize, v: usize, bias: usize, rows: Vec<usize>, cols: Vec<usize>, s: Vec<f64> },
    ScatterCells { x: usize, cells: Vec<usize> },
    MaskedSoftmax { x: usize, mask: Vec<bool> },
    MaskedMse { x: usize, target: Vec<f64>, mask: Vec<bool>, count: usize },
    ScalarFn { x: usize, grad: Vec<f64> },
    Sum(usize),
    WeightedSum(Vec<(usize, f64)>),
}

struct Node {
    op: Op,
    rows: usize,
    cols: usize,
    /// Empty for parameter nodes, whose values live in the store.
    value: Vec<f64>,
    requires_grad: bool,
}

pub struct Tape<'p> {
    nodes: Vec<Node>,
    params: &'p ParamStore,
    bound: Vec<Option<usize>>,
    track_params: bool,
    consumed: bool,
    grads: Vec<Vec<f64>>,
}

fn mismatch(op: &'static str, detail: alloc::string::String) -> Error {
    Error::ShapeMismatch { op, detail }
}

impl<'p> Tape<'p> {
    /// A tape whose parameter nodes require gradients.
    pub fn new(params: &'p ParamStore) -> Self {
        Tape {
            nodes: Vec::new(),
            params,
            bound: vec![None; params.len()],
            track_params: true,
            consumed: false,
            grads: Vec::new(),
        }
    }

    /// A tape for forward-only evaluation.
    pub fn inference(params: &'p ParamStore) -> Self {
        Tape {
            track_params: false,
            ..Self::new(params)
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, rows: usize, cols: usize, value: Vec<f64>, parents: &[usize]) -> Var {
        debug_assert!(matches!(op, Op::Param(_)) || value.len() == rows * cols);
        let requires_grad = parents.iter().any(|&p| self.nodes[p].requires_grad);
        self.nodes.push(Node {
            op,
            rows,
            cols,
            value,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    #[inline]
    fn val(&self, i: usize) -> &[f64] {
        match self.nodes[i].op {
            Op::Param(id) => self.params.get(id).data(),
            _ => &self.nodes[i].value,
        }
    }

    pub fn value(&self, v: Var) -> &[f64] {
        self.val(v.0)
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        (self.nodes[v.0].rows, self.nodes[v.0].cols)
    }

    pub fn to_tensor(&self, v: Var) -> Tensor {
        let (r, c) = self.shape(v);
        Tensor::from_vec(&[r, c], self.value(v).to_vec()).expect("node shape")
    }

    /// Input or constant matrix.
    pub fn leaf(&mut self, rows: usize, cols: usize, data: Vec<f64>, requires_grad: bool) -> Result<Var> {
        if data.len() != rows * cols {
            return Err(mismatch("leaf", format!("{} values for {rows}x{cols}", data.len())));
        }
        let v = self.push(Op::Leaf, rows, cols, data, &[]);
        self.nodes[v.0].requires_grad = requires_grad;
        Ok(v)
    }

    pub fn constant(&mut self, rows: usize, cols: usize, data: Vec<f64>) -> Result<Var> {
        self.leaf(rows, cols, data, false)
    }

    /// Binds a parameter; repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(i) = self.bound[id.index()] {
            return Var(i);
        }
        let t = self.params.get(id);
        let (rows, cols) = (t.rows(), t.cols());
        let v = self.push(Op::Param(id), rows, cols, Vec::new(), &[]);
        self.nodes[v.0].requires_grad = self.track_params;
        self.bound[id.index()] = Some(v.0);
        v
    }

    /// `x · wᵀ + b` with `x: [n, in]`, `w: [out, in]`, `b: [out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (n, inp) = self.shape(x);
        let (out, w_in) = self.shape(w);
        if inp != w_in {
            return Err(mismatch("linear", format!("x is {n}x{inp}, w is {out}x{w_in}")));
        }
        if let Some(b) = b {
            let (br, bc) = self.shape(b);
            if br * bc != out {
                return Err(mismatch("linear", format!("bias has {} values for {out} outputs", br * bc)));
            }
        }
        let xv = self.val(x.0);
        let wv = self.val(w.0);
        let mut y = vec![0.0; n * out];
        matmul_nt(xv, wv, inp, out, &mut y);
        if let Some(b) = b {
            let bv = self.val(b.0);
            for r in 0..n {
                for o in 0..out {
                    y[r * out + o] += bv[o];
                }
            }
        }
        let mut parents = vec![x.0, w.0];
        parents.extend(b.map(|b| b.0));
        Ok(self.push(
            Op::Linear {
                x: x.0,
                w: w.0,
                b: b.map(|b| b.0),
            },
            n,
            out,
            y,
            &parents,
        ))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(usize, usize)> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(mismatch(op, format!("{sa:?} vs {sb:?}")));
        }
        Ok(sa)
    }

    fn zip(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64, name: &'static str) -> Result<Var> {
        let (r, c) = self.same_shape(name, a, b)?;
        let y = self
            .val(a.0)
            .iter()
            .zip(self.val(b.0))
            .map(|(&x, &y)| f(x, y))
            .collect();
        Ok(self.push(op, r, c, y, &[a.0, b.0]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, Op::Add(a.0, b.0), |x, y| x + y, "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, Op::Sub(a.0, b.0), |x, y| x - y, "sub")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, Op::Mul(a.0, b.0), |x, y| x * y, "mul")
    }

    /// Adds the vector `v` to every row of `x`.
    pub fn add_row(&mut self, x: Var, v: Var) -> Result<Var> {
        let (n, d) = self.shape(x);
        let (vr, vc) = self.shape(v);
        if vr * vc != d {
            return Err(mismatch("add_row", format!("row vector of {} for width {d}", vr * vc)));
        }
        let vv = self.val(v.0);
        let y = self
            .val(x.0)
            .iter()
            .enumerate()
            .map(|(k, &a)| a + vv[k % d])
            .collect();
        Ok(self.push(Op::AddRow { x: x.0, v: v.0 }, n, d, y, &[x.0, v.0]))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let (n, d) = self.shape(x);
        let y = self.val(x.0).iter().map(|&a| a * c).collect();
        self.push(Op::Scale { x: x.0, c }, n, d, y, &[x.0])
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let (n, d) = self.shape(x);
        let y = self.val(x.0).iter().map(|&a| a.max(0.0)).collect();
        self.push(Op::Relu(x.0), n, d, y, &[x.0])
    }

    /// `[a ‖ b]` along columns.
    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ra, ca) = self.shape(a);
        let (rb, cb) = self.shape(b);
        if ra != rb {
            return Err(mismatch("concat_cols", format!("{ra} rows vs {rb} rows")));
        }
        let (av, bv) = (self.val(a.0), self.val(b.0));
        let mut y = Vec::with_capacity(ra * (ca + cb));
        for r in 0..ra {
            y.extend_from_slice(&av[r * ca..(r + 1) * ca]);
            y.extend_from_slice(&bv[r * cb..(r + 1) * cb]);
        }
        Ok(self.push(Op::ConcatCols(a.0, b.0), ra, ca + cb, y, &[a.0, b.0]))
    }

    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let (n, d) = self.shape(x);
        if let Some(&bad) = idx.iter().find(|&&i| i >= n) {
            return Err(mismatch("gather_rows", format!("row {bad} of {n}")));
        }
        let xv = self.val(x.0);
        let mut y = Vec::with_capacity(idx.len() * d);
        for &i in idx {
            y.extend_from_slice(&xv[i * d..(i + 1) * d]);
        }
        Ok(self.push(
            Op::GatherRows {
                x: x.0,
                idx: idx.to_vec(),
            },
            idx.len(),
            d,
            y,
            &[x.0],
        ))
    }

    /// Row `v` of the result is the mean of the rows `e` of `x` with
    /// `dst[e] == v`; rows nobody points at stay zero.
    pub fn mean_scatter(&mut self, x: Var, dst: &[usize], n: usize) -> Result<Var> {
        let (e, d) = self.shape(x);
        if dst.len() != e {
            return Err(mismatch("mean_scatter", format!("{} targets for {e} rows", dst.len())));
        }
        if let Some(&bad) = dst.iter().find(|&&v| v >= n) {
            return Err(mismatch("mean_scatter", format!("target {bad} of {n}")));
        }
        let mut count = vec![0usize; n];
        for &v in dst {
            count[v] += 1;
        }
        let inv: Vec<f64> = count
            .iter()
            .map(|&k| if k == 0 { 0.0 } else { 1.0 / k as f64 })
            .collect();
        let xv = self.val(x.0);
        let mut y = vec![0.0; n * d];
        for (k, &v) in dst.iter().enumerate() {
            for j in 0..d {
                y[v * d + j] += xv[k * d + j] * inv[v];
            }
        }
        Ok(self.push(
            Op::MeanScatter {
                x: x.0,
                dst: dst.to_vec(),
                inv,
            },
            n,
            d,
            y,
            &[x.0],
        ))
    }

    /// Outer product of a constant column `s` with the vector `v`.
    pub fn outer_const(&mut self, s: &[f64], v: Var) -> Var {
        let (vr, vc) = self.shape(v);
        let d = vr * vc;
        let vv = self.val(v.0);
        let mut y = Vec::with_capacity(s.len() * d);
        for &a in s {
            y.extend(vv.iter().map(|&b| a * b));
        }
        self.push(
            Op::OuterConst {
                v: v.0,
                s: s.to_vec(),
            },
            s.len(),
            d,
            y,
            &[v.0],
        )
    }

    /// Row `p` is `a[rows[p]] + b[cols[p]] + s[p]·v + bias`: the first
    /// layer of a pairwise readout without materializing the gathers.
    #[allow(clippy::too_many_arguments)]
    pub fn pair_sum(
        &mut self,
        a: Var,
        b: Var,
        rows: &[usize],
        cols: &[usize],
        s: &[f64],
        v: Var,
        bias: Var,
    ) -> Result<Var> {
        let ((na, d), (nb, db)) = (self.shape(a), self.shape(b));
        let (vl, bl) = (self.val(v.0).len(), self.val(bias.0).len());
        if db != d || vl != d || bl != d {
            return Err(mismatch("pair_sum", format!("widths {d}, {db}, {vl}, {bl}")));
        }
        if rows.len() != cols.len()
            || rows.len() != s.len()
            || rows.iter().any(|&r| r >= na)
            || cols.iter().any(|&c| c >= nb)
        {
            return Err(mismatch("pair_sum", format!("{} pairs over {na}x{nb}", rows.len())));
        }
        let (av, bv, vv, biasv) = (self.val(a.0), self.val(b.0), self.val(v.0), self.val(bias.0));
        let mut y = Vec::with_capacity(rows.len() * d);
        for p in 0..rows.len() {
            let ar = &av[rows[p] * d..(rows[p] + 1) * d];
            let br = &bv[cols[p] * d..(cols[p] + 1) * d];
            let sp = s[p];
            y.extend((0..d).map(|j| ar[j] + br[j] + sp * vv[j] + biasv[j]));
        }
        Ok(self.push(
            Op::PairSum {
                a: a.0,
                b: b.0,
                v: v.0,
                bias: bias.0,
                rows: rows.to_vec(),
                cols: cols.to_vec(),
                s: s.to_vec(),
            },
            rows.len(),
            d,
            y,
            &[a.0, b.0, v.0, bias.0],
        ))
    }

    /// Writes the single column `x` into the flat cells of a zero
    /// `rows x cols` matrix.
    pub fn scatter_cells(&mut self, x: Var, cells: &[usize], rows: usize, cols: usize) -> Result<Var> {
        let (p, w) = self.shape(x);
        if w != 1 || p != cells.len() || cells.iter().any(|&c| c >= rows * cols) {
            return Err(mismatch("scatter_cells", format!("{p}x{w} into {rows}x{cols}")));
        }
        let xv = self.val(x.0);
        let mut y = vec![0.0; rows * cols];
        for (k, &c) in cells.iter().enumerate() {
            y[c] = xv[k];
        }
        Ok(self.push(
            Op::ScatterCells {
                x: x.0,
                cells: cells.to_vec(),
            },
            rows,
            cols,
            y,
            &[x.0],
        ))
    }

    /// Row-wise softmax over entries with `mask == true`; other entries are
    /// exactly zero.
    pub fn masked_softmax(&mut self, x: Var, mask: &[bool]) -> Result<Var> {
        let (n, c) = self.shape(x);
        if mask.len() != n * c {
            return Err(mismatch("masked_softmax", format!("mask of {} for {n}x{c}", mask.len())));
        }
        let y = masked_softmax_rows(self.val(x.0), mask, n, c)?;
        Ok(self.push(
            Op::MaskedSoftmax {
                x: x.0,
                mask: mask.to_vec(),
            },
            n,
            c,
            y,
            &[x.0],
        ))
    }

    /// Mean of `(x - target)^2` over the masked-in entries.
    pub fn masked_mse(&mut self, x: Var, target: &[f64], mask: &[bool]) -> Result<Var> {
        let (n, c) = self.shape(x);
        if target.len() != n * c || mask.len() != n * c {
            return Err(mismatch("masked_mse", format!("target/mask length for {n}x{c}")));
        }
        let count = mask.iter().filter(|&&m| m).count();
        let xv = self.val(x.0);
        let sum: f64 = (0..n * c)
            .filter(|&k| mask[k])
            .map(|k| (xv[k] - target[k]) * (xv[k] - target[k]))
            .sum();
        let loss = if count == 0 { 0.0 } else { sum / count as f64 };
        Ok(self.push(
            Op::MaskedMse {
                x: x.0,
                target: target.to_vec(),
                mask: mask.to_vec(),
                count,
            },
            1,
            1,
            vec![loss],
            &[x.0],
        ))
    }

    /// A scalar function of `x` evaluated outside the tape, given its value
    /// and its gradient with respect to `x`.
    pub fn scalar_fn(&mut self, x: Var, value: f64, grad: Vec<f64>) -> Result<Var> {
        let (n, c) = self.shape(x);
        if grad.len() != n * c {
            return Err(mismatch("scalar_fn", format!("gradient of {} for {n}x{c}", grad.len())));
        }
        Ok(self.push(Op::ScalarFn { x: x.0, grad }, 1, 1, vec![value], &[x.0]))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.val(x.0).iter().sum();
        self.push(Op::Sum(x.0), 1, 1, vec![s], &[x.0])
    }

    /// `Σ w_k · s_k` over scalar nodes.
    pub fn weighted_sum(&mut self, terms: &[(Var, f64)]) -> Result<Var> {
        let mut s = 0.0;
        for &(v, w) in terms {
            let vals = self.val(v.0);
            if vals.len() != 1 {
                return Err(Error::NotScalar(vals.len()));
            }
            s += w * vals[0];
        }
        let parents: Vec<usize> = terms.iter().map(|t| t.0 .0).collect();
        Ok(self.push(
            Op::WeightedSum(terms.iter().map(|&(v, w)| (v.0, w)).collect()),
            1,
            1,
            vec![s],
            &parents,
        ))
    }

    /// Back-propagates from the scalar `loss`. A tape supports one pass.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.consumed {
            return Err(Error::StaleTape);
        }
        let n = self.val(loss.0).len();
        if n != 1 {
            return Err(Error::NotScalar(n));
        }
        self.consumed = true;
        let mut grads: Vec<Vec<f64>> = self.nodes.iter().map(|_| Vec::new()).collect();
        grads[loss.0] = vec![1.0];
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad || grads[i].is_empty() {
                continue;
            }
            let g = core::mem::take(&mut grads[i]);
            self.backprop_node(i, &g, &mut grads);
            grads[i] = g;
        }
        self.grads = grads;
        Ok(())
    }

    fn acc<'g>(&self, grads: &'g mut [Vec<f64>], p: usize) -> Option<&'g mut Vec<f64>> {
        let node = &self.nodes[p];
        if !node.requires_grad {
            return None;
        }
        let slot = &mut grads[p];
        if slot.is_empty() {
            *slot = vec![0.0; node.rows * node.cols];
        }
        Some(slot)
    }

    fn backprop_node(&self, i: usize, g: &[f64], grads: &mut [Vec<f64>]) {
        let node = &self.nodes[i];
        let (rows, cols) = (node.rows, node.cols);
        match &node.op {
            Op::Leaf | Op::Param(_) => {}
            Op::Linear { x, w, b } => {
                let (n, inp) = (self.nodes[*x].rows, self.nodes[*x].cols);
                let out = cols;
                let xv = self.val(*x);
                let wv = self.val(*w);
                if let Some(gx) = self.acc(grads, *x) {
                    for r in 0..n {
                        let gr = &g[r * out..(r + 1) * out];
                        let gxr = &mut gx[r * inp..(r + 1) * inp];
                        for (o, &go) in gr.iter().enumerate() {
                            if go == 0.0 {
                                continue;
                            }
                            let wo = &wv[o * inp..(o + 1) * inp];
                            for (a, &b) in gxr.iter_mut().zip(wo) {
                                *a += go * b;
                            }
                        }
                    }
                }
                if let Some(gw) = self.acc(grads, *w) {
                    for r in 0..n {
                        let xr = &xv[r * inp..(r + 1) * inp];
                        for o in 0..out {
                            let go = g[r * out + o];
                            if go == 0.0 {
                                continue;
                            }
                            let gwo = &mut gw[o * inp..(o + 1) * inp];
                            for (a, &b) in gwo.iter_mut().zip(xr) {
                                *a += go * b;
                            }
                        }
                    }
                }
                if let Some(b) = b {
                    if let Some(gb) = self.acc(grads, *b) {
                        for r in 0..n {
                            for o in 0..out {
                                gb[o] += g[r * out + o];
                            }
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                for (p, sign) in [(*a, 1.0), (*b, 1.0)] {
                    if let Some(gp) = self.acc(grads, p) {
                        gp.iter_mut().zip(g).for_each(|(x, &y)| *x += sign * y);
                    }
                }
            }
            Op::Sub(a, b) => {
                for (p, sign) in [(*a, 1.0), (*b, -1.0)] {
                    if let Some(gp) = self.acc(grads, p) {
                        gp.iter_mut().zip(g).for_each(|(x, &y)| *x += sign * y);
                    }
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.val(*a), self.val(*b));
                if let Some(ga) = self.acc(grads, *a) {
                    for k in 0..g.len() {
                        ga[k] += g[k] * bv[k];
                    }
                }
                if let Some(gb) = self.acc(grads, *b) {
                    for k in 0..g.len() {
                        gb[k] += g[k] * av[k];
                    }
                }
            }
            Op::AddRow { x, v } => {
                if let Some(gx) = self.acc(grads, *x) {
                    gx.iter_mut().zip(g).for_each(|(a, &b)| *a += b);
                }
                if let Some(gv) = self.acc(grads, *v) {
                    for (k, &b) in g.iter().enumerate() {
                        gv[k % cols] += b;
                    }
                }
            }
            Op::Scale { x, c } => {
                if let Some(gx) = self.acc(grads, *x) {
                    gx.iter_mut().zip(g).for_each(|(a, &b)| *a += c * b);
                }
            }
            Op::Relu(x) => {
                let xv = self.val(*x);
                if let Some(gx) = self.acc(grads, *x) {
                    for k in 0..g.len() {
                        if xv[k] > 0.0 {
                            gx[k] += g[k];
                        }
                    }
                }
            }
            Op::ConcatCols(a, b) => {
                let (ca, cb) = (self.nodes[*a].cols, self.nodes[*b].cols);
                if let Some(ga) = self.acc(grads, *a) {
                    for r in 0..rows {
                        for j in 0..ca {
                            ga[r * ca + j] += g[r * cols + j];
                        }
                    }
                }
                if let Some(gb) = self.acc(grads, *b) {
                    for r in 0..rows {
                        for j in 0..cb {
                            gb[r * cb + j] += g[r * cols + ca + j];
                        }
                    }
                }
            }
            Op::GatherRows { x, idx } => {
                if let Some(gx) = self.acc(grads, *x) {
                    for (k, &src) in idx.iter().enumerate() {
                        for j in 0..cols {
                            gx[src * cols + j] += g[k * cols + j];
                        }
                    }
                }
            }
            Op::MeanScatter { x, dst, inv } => {
                if let Some(gx) = self.acc(grads, *x) {
                    for (k, &v) in dst.iter().enumerate() {
                        for j in 0..cols {
                            gx[k * cols + j] += g[v * cols + j] * inv[v];
                        }
                    }
                }
            }
            Op::OuterConst { v, s } => {
                if let Some(gv) = self.acc(grads, *v) {
                    for (p, &a) in s.iter().enumerate() {
                        for j in 0..cols {
                            gv[j] += a * g[p * cols + j];
                        }
                    }
                }
            }
            Op::PairSum {
                a,
                b,
                v,
                bias,
                rows: ra,
                cols: cb,
                s,
            } => {
                if let Some(ga) = self.acc(grads, *a) {
                    for (p, &r) in ra.iter().enumerate() {
                        for j in 0..cols {
                            ga[r * cols + j] += g[p * cols + j];
                        }
                    }
                }
                if let Some(gb) = self.acc(grads, *b) {
                    for (p, &c) in cb.iter().enumerate() {
                        for j in 0..cols {
                            gb[c * cols + j] += g[p * cols + j];
                        }
                    }
                }
                if let Some(gv) = self.acc(grads, *v) {
                    for (p, &sp) in s.iter().enumerate() {
                        for j in 0..cols {
                            gv[j] += sp * g[p * cols + j];
                        }
                    }
                }
                if let Some(gbias) = self.acc(grads, *bias) {
                    for (k, &x) in g.iter().enumerate() {
                        gbias[k % cols] += x;
                    }
                }
            }
            Op::ScatterCells { x, cells } => {
                if let Some(gx) = self.acc(grads, *x) {
                    for (k, &c) in cells.iter().enumerate() {
                        gx[k] += g[c];
                    }
                }
            }
            Op::MaskedSoftmax { x, mask } => {
                let p = &node.value;
                if let Some(gx) = self.acc(grads, *x) {
                    for r in 0..rows {
                        let row = r * cols..(r + 1) * cols;
                        let dot: f64 = row.clone().map(|k| p[k] * g[k]).sum();
                        for k in row {
                            if mask[k] {
                                gx[k] += p[k] * (g[k] - dot);
                            }
                        }
                    }
                }
            }
            Op::MaskedMse {
                x,
                target,
                mask,
                count,
            } => {
                if *count == 0 {
                    return;
                }
                let xv = self.val(*x);
                let scale = 2.0 * g[0] / *count as f64;
                if let Some(gx) = self.acc(grads, *x) {
                    for k in 0..mask.len() {
                        if mask[k] {
                            gx[k] += scale * (xv[k] - target[k]);
                        }
                    }
                }
            }
            Op::ScalarFn { x, grad } => {
                if let Some(gx) = self.acc(grads, *x) {
                    gx.iter_mut().zip(grad).for_each(|(a, &b)| *a += g[0] * b);
                }
            }
            Op::Sum(x) => {
                if let Some(gx) = self.acc(grads, *x) {
                    gx.iter_mut().for_each(|a| *a += g[0]);
                }
            }
            Op::WeightedSum(terms) => {
                for &(p, w) in terms {
                    if let Some(gp) = self.acc(grads, p) {
                        gp[0] += w * g[0];
                    }
                }
            }
        }
    }

    /// Gradient of a node after [`Tape::backward`]; `None` when the node
    /// does not depend on anything that requires gradients or was not
    /// reached.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads
            .get(v.0)
            .filter(|g| !g.is_empty())
            .map(|g| g.as_slice())
    }

    /// Gradients aligned with the parameter store; zeros for parameters
    /// the loss does not reach.
    pub fn param_grads(&self) -> Vec<Vec<f64>> {
        self.params
            .iter()
            .map(|(id, _, t)| {
                self.bound[id.index()]
                    .and_then(|i| self.grads.get(i))
                    .filter(|g| !g.is_empty())
                    .cloned()
                    .unwrap_or_else(|| vec![0.0; t.len()])
            })
            .collect()
    }
}

/// Dot product with four independent partial sums, which lets the compiler
/// keep several multiply-adds in flight.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a4, b4) = (a[..n].chunks_exact(4), b[..n].chunks_exact(4));
    let (ra, rb) = (a4.remainder(), b4.remainder());
    let mut acc = [0.0f64; 4];
    for (x, y) in a4.zip(b4) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    let tail: f64 = ra.iter().zip(rb).map(|(x, y)| x * y).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// `y = x·wᵀ` for row-major `x: [n, inp]`, `w: [out, inp]`. Rows are taken
/// four at a time so each weight row is read once per block.
fn matmul_nt(x: &[f64], w: &[f64], inp: usize, out: usize, y: &mut [f64]) {
    if inp == 0 {
        return;
    }
    let mut xb = x.chunks_exact(4 * inp);
    let mut yb = y.chunks_exact_mut(4 * out);
    for (xs, ys) in (&mut xb).zip(&mut yb) {
        let (x0, rest) = xs.split_at(inp);
        let (x1, rest) = rest.split_at(inp);
        let (x2, x3) = rest.split_at(inp);
        for (o, wo) in w.chunks_exact(inp).enumerate() {
            let mut acc = [[0.0f64; 4]; 4];
            let body = inp - inp % 4;
            for k in (0..body).step_by(4) {
                let wk = &wo[k..k + 4];
                for (a, xr) in acc.iter_mut().zip([x0, x1, x2, x3]) {
                    let xk = &xr[k..k + 4];
                    for l in 0..4 {
                        a[l] += xk[l] * wk[l];
                    }
                }
            }
            for (i, (a, xr)) in acc.iter().zip([x0, x1, x2, x3]).enumerate() {
                let tail: f64 = (body..inp).map(|k| xr[k] * wo[k]).sum();
                ys[i * out + o] = (a[0] + a[1]) + (a[2] + a[3]) + tail;
            }
        }
    }
    for (xr, yr) in xb.remainder().chunks_exact(inp).zip(yb.into_remainder().chunks_exact_mut(out)) {
        for (yo, wo) in yr.iter_mut().zip(w.chunks_exact(inp)) {
            *yo = dot(xr, wo);
        }
    }
}

/// Row-wise softmax restricted to `mask`, zero elsewhere.
pub fn masked_softmax_rows(x: &[f64], mask: &[bool], rows: usize, cols: usize) -> Result<Vec<f64>> {
    let mut y = vec![0.0; rows * cols];
    for r in 0..rows {
        let row = r * cols..(r + 1) * cols;
        let max = row
            .clone()
            .filter(|&k| mask[k])
            .map(|k| x[k])
            .fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            return Err(Error::AllMaskedRow(r));
        }
        let mut z = 0.0;
        for k in row.clone() {
            if mask[k] {
                y[k] = exp(x[k] - max);
                z += y[k];
            }
        }
        for k in row {
            y[k] /= z;
        }
    }
    Ok(y)
}
