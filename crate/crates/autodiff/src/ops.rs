//! Forward definitions of the recorded primitives.
//!
//! Shape errors are programming errors and panic with the primitive name and
//! both shapes. Non-finite results are flagged on the tape and surface as
//! [`crate::TensorError::NonFinite`] from `backward`/`check_finite`.

use std::ops::{Add, Div, Mul, Neg, Sub};
use std::rc::Rc;

use crate::kernels::gemm;
use crate::tape::{InterpSlot, Op, PathTable, Var};
use crate::tensor::Tensor;

const LN_EPS: f64 = 1e-5;

pub(crate) fn gelu_parts(x: f64) -> (f64, f64) {
    // tanh approximation; returns (value, derivative)
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    const A: f64 = 0.044_715;
    let u = C * (x + A * x * x * x);
    let t = 1.0 - 2.0 / ((2.0 * u).exp() + 1.0);
    let value = 0.5 * x * (1.0 + t);
    let du = C * (1.0 + 3.0 * A * x * x);
    let deriv = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
    (value, deriv)
}

fn same_shape(name: &str, a: &Tensor, b: &Tensor) {
    assert!(
        a.shape() == b.shape(),
        "{name}: shape mismatch {:?} vs {:?}",
        a.shape(),
        b.shape()
    );
}

impl<'t> Var<'t> {
    fn unary(
        self,
        name: &'static str,
        f: impl Fn(f64) -> f64,
        op: impl FnOnce(usize) -> Op,
    ) -> Var<'t> {
        let out = self.value().map(f);
        self.tape.record(name, out, &[self.id], || op(self.id))
    }

    fn binary(
        self,
        other: Var<'t>,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
        op: impl FnOnce(usize, usize) -> Op,
    ) -> Var<'t> {
        let out = {
            let a = self.value();
            let b = other.value();
            same_shape(name, &a, &b);
            a.zip_map(&b, f)
        };
        self.tape
            .record(name, out, &[self.id, other.id], || op(self.id, other.id))
    }

    /// 2-D matrix product.
    pub fn matmul(self, other: Var<'t>) -> Var<'t> {
        self.matmul_ex(other, false, false)
    }

    /// `self · otherᵀ`.
    pub fn matmul_t(self, other: Var<'t>) -> Var<'t> {
        self.matmul_ex(other, false, true)
    }

    /// `selfᵀ · other`.
    pub fn t_matmul(self, other: Var<'t>) -> Var<'t> {
        self.matmul_ex(other, true, false)
    }

    fn matmul_ex(self, other: Var<'t>, ta: bool, tb: bool) -> Var<'t> {
        let out = {
            let a = self.value();
            let b = other.value();
            assert!(
                a.ndim() == 2 && b.ndim() == 2,
                "matmul: expected 2-D operands, got {:?} vs {:?}",
                a.shape(),
                b.shape()
            );
            let (ar, ac) = a.dims2();
            let (br, bc) = b.dims2();
            let (m, k) = if ta { (ac, ar) } else { (ar, ac) };
            let (k2, n) = if tb { (bc, br) } else { (br, bc) };
            assert!(
                k == k2,
                "matmul: shape mismatch {:?} vs {:?}",
                a.shape(),
                b.shape()
            );
            let mut c = vec![0.0; m * n];
            gemm(m, k, n, a.data(), ta, b.data(), tb, &mut c, 0.0);
            Tensor::matrix(m, n, c)
        };
        self.tape.record("matmul", out, &[self.id, other.id], || Op::MatMul {
            a: self.id,
            b: other.id,
            ta,
            tb,
        })
    }

    /// Batched product of `[B, m, k]` and `[B, k, n]`.
    pub fn bmm(self, other: Var<'t>) -> Var<'t> {
        self.bmm_ex(other, false)
    }

    /// Batched `self · otherᵀ` for `[B, m, k]` and `[B, n, k]`.
    pub fn bmm_t(self, other: Var<'t>) -> Var<'t> {
        self.bmm_ex(other, true)
    }

    fn bmm_ex(self, other: Var<'t>, tb: bool) -> Var<'t> {
        let out = {
            let a = self.value();
            let b = other.value();
            let (sa, sb) = (a.shape(), b.shape());
            assert!(
                sa.len() == 3 && sb.len() == 3 && sa[0] == sb[0],
                "bmm: shape mismatch {sa:?} vs {sb:?}"
            );
            let (batch, m, k) = (sa[0], sa[1], sa[2]);
            let (k2, n) = if tb { (sb[2], sb[1]) } else { (sb[1], sb[2]) };
            assert!(k == k2, "bmm: shape mismatch {sa:?} vs {sb:?}");
            let mut c = vec![0.0; batch * m * n];
            for bi in 0..batch {
                gemm(
                    m,
                    k,
                    n,
                    &a.data()[bi * m * k..(bi + 1) * m * k],
                    false,
                    &b.data()[bi * k * n..(bi + 1) * k * n],
                    tb,
                    &mut c[bi * m * n..(bi + 1) * m * n],
                    0.0,
                );
            }
            Tensor::new(vec![batch, m, n], c)
        };
        self.tape.record("bmm", out, &[self.id, other.id], || Op::BatchMatMul {
            a: self.id,
            b: other.id,
            tb,
        })
    }

    pub fn transpose(self) -> Var<'t> {
        let out = self.value().transpose();
        self.tape
            .record("transpose", out, &[self.id], || Op::Transpose(self.id))
    }

    /// Adds a row vector (`[c]` or `[1, c]`) to every row.
    pub fn add_row(self, row: Var<'t>) -> Var<'t> {
        let out = {
            let a = self.value();
            let r = row.value();
            let (rows, cols) = a.rows_cols();
            assert!(r.len() == cols, "add_row: shape mismatch {:?} vs {:?}", a.shape(), r.shape());
            let mut data = a.data().to_vec();
            for i in 0..rows {
                for (x, b) in data[i * cols..(i + 1) * cols].iter_mut().zip(r.data()) {
                    *x += b;
                }
            }
            Tensor::new(a.shape().to_vec(), data)
        };
        self.tape
            .record("add_row", out, &[self.id, row.id], || Op::AddRow(self.id, row.id))
    }

    /// Multiplies every row elementwise by a row vector.
    pub fn mul_row(self, row: Var<'t>) -> Var<'t> {
        let out = {
            let a = self.value();
            let r = row.value();
            let (rows, cols) = a.rows_cols();
            assert!(r.len() == cols, "mul_row: shape mismatch {:?} vs {:?}", a.shape(), r.shape());
            let mut data = a.data().to_vec();
            for i in 0..rows {
                for (x, b) in data[i * cols..(i + 1) * cols].iter_mut().zip(r.data()) {
                    *x *= b;
                }
            }
            Tensor::new(a.shape().to_vec(), data)
        };
        self.tape
            .record("mul_row", out, &[self.id, row.id], || Op::MulRow(self.id, row.id))
    }

    /// Scales row `i` by `col[i]`.
    pub fn mul_col(self, col: Var<'t>) -> Var<'t> {
        let out = {
            let a = self.value();
            let c = col.value();
            let (rows, cols) = a.rows_cols();
            assert!(c.len() == rows, "mul_col: shape mismatch {:?} vs {:?}", a.shape(), c.shape());
            let mut data = a.data().to_vec();
            for i in 0..rows {
                let s = c.data()[i];
                data[i * cols..(i + 1) * cols].iter_mut().for_each(|x| *x *= s);
            }
            Tensor::new(a.shape().to_vec(), data)
        };
        self.tape
            .record("mul_col", out, &[self.id, col.id], || Op::MulCol(self.id, col.id))
    }

    pub fn scale(self, s: f64) -> Var<'t> {
        self.unary("scale", |x| x * s, |a| Op::Scale(a, s))
    }

    pub fn add_scalar(self, s: f64) -> Var<'t> {
        self.unary("add_scalar", |x| x + s, Op::AddScalar)
    }

    /// `s - self`.
    pub fn rsub_scalar(self, s: f64) -> Var<'t> {
        self.scale(-1.0).add_scalar(s)
    }

    pub fn exp(self) -> Var<'t> {
        self.unary("exp", f64::exp, Op::Exp)
    }

    /// Natural log; `log(0) = -inf` is permitted and consumed by the softmaxes.
    pub fn log(self) -> Var<'t> {
        self.unary("log", f64::ln, Op::Log)
    }

    pub fn tanh(self) -> Var<'t> {
        self.unary("tanh", f64::tanh, Op::Tanh)
    }

    pub fn sigmoid(self) -> Var<'t> {
        self.unary("sigmoid", |x| 1.0 / (1.0 + (-x).exp()), Op::Sigmoid)
    }

    /// Rectifier. The gradient at 0 is the left derivative, 0.
    pub fn relu(self) -> Var<'t> {
        self.unary("relu", |x| x.max(0.0), Op::Relu)
    }

    pub fn gelu(self) -> Var<'t> {
        self.unary("gelu", |x| gelu_parts(x).0, Op::Gelu)
    }

    /// `1/x` for `x > 0`, else 0 (gradient 0 there as well).
    pub fn safe_recip(self) -> Var<'t> {
        self.unary("safe_recip", |x| if x > 0.0 { 1.0 / x } else { 0.0 }, Op::SafeRecip)
    }

    /// `x^{-1/2}` for `x > 0`, else 0 (gradient 0 there as well).
    pub fn safe_rsqrt(self) -> Var<'t> {
        self.unary(
            "safe_rsqrt",
            |x| if x > 0.0 { 1.0 / x.sqrt() } else { 0.0 },
            Op::SafeRsqrt,
        )
    }

    /// Softmax over the trailing dimension. A row of only `-inf` maps to zeros.
    pub fn softmax_rows(self) -> Var<'t> {
        let out = {
            let a = self.value();
            let (rows, cols) = a.rows_cols();
            let mut data = a.data().to_vec();
            for i in 0..rows {
                let row = &mut data[i * cols..(i + 1) * cols];
                let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                if m == f64::NEG_INFINITY {
                    row.fill(0.0);
                    continue;
                }
                let mut s = 0.0;
                for x in row.iter_mut() {
                    *x = (*x - m).exp();
                    s += *x;
                }
                row.iter_mut().for_each(|x| *x /= s);
            }
            Tensor::new(a.shape().to_vec(), data)
        };
        self.tape
            .record("softmax_rows", out, &[self.id], || Op::SoftmaxRows(self.id))
    }

    /// `out_ij = q_ij e^{w_ij} / Σ_k q_ik e^{w_ik}` over the trailing dimension.
    ///
    /// This equals `softmax(w + log q)` but stays differentiable where
    /// `q_ij = 0`. Rows whose weights are all zero produce zeros.
    pub fn weighted_softmax_rows(self, q: Var<'t>) -> Var<'t> {
        let (out, scaled, denom) = {
            let w = self.value();
            let qv = q.value();
            same_shape("weighted_softmax_rows", &w, &qv);
            let (rows, cols) = w.rows_cols();
            let mut out = vec![0.0; w.len()];
            let mut scaled = vec![0.0; w.len()];
            let mut denom = vec![0.0; rows];
            for i in 0..rows {
                let wr = &w.data()[i * cols..(i + 1) * cols];
                let qr = &qv.data()[i * cols..(i + 1) * cols];
                let m = wr
                    .iter()
                    .zip(qr)
                    .filter(|(_, &qq)| qq > 0.0)
                    .map(|(&ww, _)| ww)
                    .fold(f64::NEG_INFINITY, f64::max);
                if m == f64::NEG_INFINITY {
                    continue;
                }
                let e = &mut scaled[i * cols..(i + 1) * cols];
                let mut s = 0.0;
                for j in 0..cols {
                    e[j] = (wr[j] - m).exp();
                    s += qr[j] * e[j];
                }
                denom[i] = s;
                for j in 0..cols {
                    out[i * cols + j] = qr[j] * e[j] / s;
                }
            }
            (Tensor::new(w.shape().to_vec(), out), scaled, denom)
        };
        self.tape.record(
            "weighted_softmax_rows",
            out,
            &[self.id, q.id],
            || Op::WeightedSoftmaxRows {
                w: self.id,
                q: q.id,
                scaled,
                denom,
            },
        )
    }

    pub fn sum(self) -> Var<'t> {
        let out = Tensor::scalar(self.value().sum());
        self.tape.record("sum", out, &[self.id], || Op::Sum(self.id))
    }

    pub fn mean(self) -> Var<'t> {
        let out = {
            let a = self.value();
            Tensor::scalar(a.sum() / a.len() as f64)
        };
        self.tape.record("mean", out, &[self.id], || Op::Mean(self.id))
    }

    /// Sums over the trailing dimension.
    pub fn sum_rows(self) -> Var<'t> {
        let out = {
            let a = self.value();
            let (rows, cols) = a.rows_cols();
            Tensor::vector((0..rows).map(|i| a.data()[i * cols..(i + 1) * cols].iter().sum()).collect())
        };
        self.tape.record("sum_rows", out, &[self.id], || Op::SumRows(self.id))
    }

    /// Column sums of a 2-D tensor, shape `[1, cols]`.
    pub fn sum_cols(self) -> Var<'t> {
        let out = {
            let a = self.value();
            let (rows, cols) = a.dims2();
            let mut s = vec![0.0; cols];
            for i in 0..rows {
                for (acc, x) in s.iter_mut().zip(a.row(i)) {
                    *acc += x;
                }
            }
            Tensor::matrix(1, cols, s)
        };
        self.tape.record("sum_cols", out, &[self.id], || Op::SumCols(self.id))
    }

    pub fn concat_cols(parts: &[Var<'t>]) -> Var<'t> {
        assert!(!parts.is_empty(), "concat_cols: no inputs");
        let tape = parts[0].tape;
        let out = {
            let vals: Vec<_> = parts.iter().map(|p| p.value()).collect();
            let rows = vals[0].dims2().0;
            for v in &vals {
                assert!(
                    v.dims2().0 == rows,
                    "concat_cols: shape mismatch {:?} vs {:?}",
                    vals[0].shape(),
                    v.shape()
                );
            }
            let total: usize = vals.iter().map(|v| v.dims2().1).sum();
            let mut data = Vec::with_capacity(rows * total);
            for i in 0..rows {
                for v in &vals {
                    data.extend_from_slice(v.row(i));
                }
            }
            Tensor::matrix(rows, total, data)
        };
        let ids: Vec<_> = parts.iter().map(|p| p.id).collect();
        tape.record("concat_cols", out, &ids, || Op::ConcatCols(ids.clone()))
    }

    pub fn concat_rows(parts: &[Var<'t>]) -> Var<'t> {
        assert!(!parts.is_empty(), "concat_rows: no inputs");
        let tape = parts[0].tape;
        let out = {
            let vals: Vec<_> = parts.iter().map(|p| p.value()).collect();
            let cols = vals[0].dims2().1;
            let mut rows = 0;
            let mut data = Vec::new();
            for v in &vals {
                assert!(
                    v.dims2().1 == cols,
                    "concat_rows: shape mismatch {:?} vs {:?}",
                    vals[0].shape(),
                    v.shape()
                );
                rows += v.dims2().0;
                data.extend_from_slice(v.data());
            }
            Tensor::matrix(rows, cols, data)
        };
        let ids: Vec<_> = parts.iter().map(|p| p.id).collect();
        tape.record("concat_rows", out, &ids, || Op::ConcatRows(ids.clone()))
    }

    /// Columns `start..end` of a 2-D tensor.
    pub fn slice_cols(self, start: usize, end: usize) -> Var<'t> {
        let out = {
            let a = self.value();
            let (rows, cols) = a.dims2();
            assert!(start <= end && end <= cols, "slice_cols: {start}..{end} out of {:?}", a.shape());
            let mut data = Vec::with_capacity(rows * (end - start));
            for i in 0..rows {
                data.extend_from_slice(&a.row(i)[start..end]);
            }
            Tensor::matrix(rows, end - start, data)
        };
        self.tape
            .record("slice_cols", out, &[self.id], || Op::SliceCols { a: self.id, start })
    }

    /// Rows of a 2-D tensor picked by index (repeats allowed).
    pub fn gather_rows(self, index: &[usize]) -> Var<'t> {
        let out = {
            let a = self.value();
            let (rows, cols) = a.dims2();
            let mut data = Vec::with_capacity(index.len() * cols);
            for &r in index {
                assert!(r < rows, "gather_rows: index {r} out of {:?}", a.shape());
                data.extend_from_slice(a.row(r));
            }
            Tensor::matrix(index.len(), cols, data)
        };
        self.tape.record("gather_rows", out, &[self.id], || Op::GatherRows {
            a: self.id,
            index: index.to_vec(),
        })
    }

    pub fn reshape(self, shape: &[usize]) -> Var<'t> {
        let out = self.to_tensor().reshape(shape);
        self.tape.record("reshape", out, &[self.id], || Op::Reshape(self.id))
    }

    /// Zero-pads a 2-D tensor on the bottom and right to `rows × cols`.
    pub fn pad2d(self, rows: usize, cols: usize) -> Var<'t> {
        let out = {
            let a = self.value();
            let (r, c) = a.dims2();
            assert!(rows >= r && cols >= c, "pad2d: cannot pad {:?} to [{rows}, {cols}]", a.shape());
            let mut t = Tensor::zeros(&[rows, cols]);
            for i in 0..r {
                t.data_mut()[i * cols..i * cols + c].copy_from_slice(a.row(i));
            }
            t
        };
        self.tape.record("pad2d", out, &[self.id], || Op::Pad2d(self.id))
    }

    /// Replaces entries where `mask` is set by `value`.
    pub fn masked_fill(self, mask: &[bool], value: f64) -> Var<'t> {
        let out = {
            let a = self.value();
            assert!(
                mask.len() == a.len(),
                "masked_fill: shape mismatch {:?} vs [{}]",
                a.shape(),
                mask.len()
            );
            let data = a
                .data()
                .iter()
                .zip(mask)
                .map(|(&x, &m)| if m { value } else { x })
                .collect();
            Tensor::new(a.shape().to_vec(), data)
        };
        self.tape.record("masked_fill", out, &[self.id], || Op::MaskedFill {
            a: self.id,
            mask: mask.to_vec(),
        })
    }

    /// Diagonal of a square matrix as a vector.
    pub fn diag(self) -> Var<'t> {
        let out = {
            let a = self.value();
            let (r, c) = a.dims2();
            assert!(r == c, "diag: expected square, got {:?}", a.shape());
            Tensor::vector((0..r).map(|i| a.get2(i, i)).collect())
        };
        self.tape.record("diag", out, &[self.id], || Op::Diag(self.id))
    }

    /// Symmetric `n × n` matrix with `out[i][j] = out[j][i] = values[k]` for
    /// `pairs[k] = (i, j)` and zeros elsewhere. Pairs must be distinct, `i != j`.
    pub fn scatter_sym(self, pairs: &[(usize, usize)], n: usize) -> Var<'t> {
        let out = {
            let v = self.value();
            assert!(
                v.len() == pairs.len(),
                "scatter_sym: shape mismatch {:?} vs [{}]",
                v.shape(),
                pairs.len()
            );
            let mut t = Tensor::zeros(&[n, n]);
            for (&(i, j), &x) in pairs.iter().zip(v.data()) {
                assert!(i != j && i < n && j < n, "scatter_sym: bad pair ({i}, {j}) for n={n}");
                t.set2(i, j, x);
                t.set2(j, i, x);
            }
            t
        };
        self.tape.record("scatter_sym", out, &[self.id], || Op::ScatterSym {
            values: self.id,
            pairs: pairs.to_vec(),
        })
    }

    /// `[n·m, d]` tensor whose row `i·m + j` is `self[i] + other[j]`.
    pub fn pair_sum(self, other: Var<'t>) -> Var<'t> {
        let out = {
            let a = self.value();
            let b = other.value();
            let (n, d) = a.dims2();
            let (m, d2) = b.dims2();
            assert!(d == d2, "pair_sum: shape mismatch {:?} vs {:?}", a.shape(), b.shape());
            let mut data = vec![0.0; n * m * d];
            for i in 0..n {
                let ai = a.row(i);
                for j in 0..m {
                    let dst = &mut data[(i * m + j) * d..(i * m + j + 1) * d];
                    for ((o, x), y) in dst.iter_mut().zip(ai).zip(b.row(j)) {
                        *o = x + y;
                    }
                }
            }
            Tensor::matrix(n * m, d, data)
        };
        self.tape
            .record("pair_sum", out, &[self.id, other.id], || Op::PairSum(self.id, other.id))
    }

    /// `out[i] = Σ_j self[i][j] · edges[i·m + j]` for `self: [n, m]`, `edges: [n·m, d]`.
    pub fn pair_weighted_sum(self, edges: Var<'t>) -> Var<'t> {
        let out = {
            let alpha = self.value();
            let e = edges.value();
            let (n, m) = alpha.dims2();
            let (nm, d) = e.dims2();
            assert!(
                nm == n * m,
                "pair_weighted_sum: shape mismatch {:?} vs {:?}",
                alpha.shape(),
                e.shape()
            );
            let mut data = vec![0.0; n * d];
            for i in 0..n {
                let dst = &mut data[i * d..(i + 1) * d];
                for j in 0..m {
                    let w = alpha.data()[i * m + j];
                    if w == 0.0 {
                        continue;
                    }
                    for (o, x) in dst.iter_mut().zip(e.row(i * m + j)) {
                        *o += w * x;
                    }
                }
            }
            Tensor::matrix(n, d, data)
        };
        self.tape.record(
            "pair_weighted_sum",
            out,
            &[self.id, edges.id],
            || Op::PairWeightedSum {
                alpha: self.id,
                edges: edges.id,
            },
        )
    }

    /// For each pair of `paths`, the sum of `1/self[u][v]` over its edges.
    /// Pairs without edges give 0.
    pub fn path_sums(self, paths: Rc<PathTable>) -> Var<'t> {
        let out = {
            let a = self.value();
            let (n, m) = a.dims2();
            assert!(
                paths.rows == n && paths.cols == m,
                "path_sums: shape mismatch {:?} vs [{}, {}]",
                a.shape(),
                paths.rows,
                paths.cols
            );
            let mut data = vec![0.0; n * m];
            for (p, out) in data.iter_mut().enumerate() {
                let mut s = 0.0;
                for &(u, v) in &paths.edges[paths.offsets[p]..paths.offsets[p + 1]] {
                    s += 1.0 / a.get2(u as usize, v as usize);
                }
                *out = s;
            }
            Tensor::matrix(n, m, data)
        };
        self.tape.record("path_sums", out, &[self.id], || Op::PathSums {
            adj: self.id,
            paths,
        })
    }

    /// Rows interpolated from `self` (a `[T, D]` table) at positions.
    ///
    /// `slots` is usually built with [`interp_slots`]; for `Lerp` slots the
    /// output row is `(1-η)·T[l] + η·T[l+1]` and the position receives the
    /// gradient `T[l+1] - T[l]`. `pos` may be `None` when every slot is fixed
    /// or the positions are constants.
    pub fn interp_rows(self, pos: Option<Var<'t>>, slots: Vec<InterpSlot>) -> Var<'t> {
        let out = {
            let t = self.value();
            let (rows, d) = t.dims2();
            if let Some(p) = pos {
                assert!(
                    p.value().len() == slots.len(),
                    "interp_rows: shape mismatch {:?} vs [{}]",
                    p.shape(),
                    slots.len()
                );
            }
            let mut data = vec![0.0; slots.len() * d];
            for (r, slot) in slots.iter().enumerate() {
                let dst = &mut data[r * d..(r + 1) * d];
                match *slot {
                    InterpSlot::Fixed(k) => {
                        assert!(k < rows, "interp_rows: row {k} out of {:?}", t.shape());
                        dst.copy_from_slice(t.row(k));
                    }
                    InterpSlot::Lerp { lower, eta } => {
                        assert!(lower + 1 < rows, "interp_rows: row {} out of {:?}", lower + 1, t.shape());
                        for ((o, a), b) in dst.iter_mut().zip(t.row(lower)).zip(t.row(lower + 1)) {
                            *o = (1.0 - eta) * a + eta * b;
                        }
                    }
                }
            }
            Tensor::matrix(slots.len(), d, data)
        };
        let mut inputs = vec![self.id];
        if let Some(p) = pos {
            inputs.push(p.id);
        }
        self.tape.record("interp_rows", out, &inputs, || Op::InterpRows {
            table: self.id,
            pos: pos.map(|p| p.id),
            slots,
        })
    }

    /// One sweep of `p_i ← 1 − Π_j (1 − A_ij p_j)` with `self` as `A`.
    pub fn noisy_or(self, p: Var<'t>) -> Var<'t> {
        let out = {
            let a = self.value();
            let pv = p.value();
            let (n, m) = a.dims2();
            assert!(pv.len() == m, "noisy_or: shape mismatch {:?} vs {:?}", a.shape(), pv.shape());
            Tensor::vector(
                (0..n)
                    .map(|i| {
                        let prod: f64 = a
                            .row(i)
                            .iter()
                            .zip(pv.data())
                            .map(|(&aij, &pj)| 1.0 - aij * pj)
                            .product();
                        1.0 - prod
                    })
                    .collect(),
            )
        };
        self.tape
            .record("noisy_or", out, &[self.id, p.id], || Op::NoisyOr { adj: self.id, p: p.id })
    }

    /// Normalizes each row to zero mean and unit variance (no affine part).
    pub fn layer_norm(self) -> Var<'t> {
        let (out, inv_std) = {
            let a = self.value();
            let (rows, cols) = a.rows_cols();
            let mut data = a.data().to_vec();
            let mut inv = vec![0.0; rows];
            for i in 0..rows {
                let row = &mut data[i * cols..(i + 1) * cols];
                let mu = row.iter().sum::<f64>() / cols as f64;
                let var = row.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / cols as f64;
                let s = 1.0 / (var + LN_EPS).sqrt();
                row.iter_mut().for_each(|x| *x = (*x - mu) * s);
                inv[i] = s;
            }
            (Tensor::new(a.shape().to_vec(), data), inv)
        };
        self.tape.record("layer_norm", out, &[self.id], || Op::LayerNorm {
            a: self.id,
            inv_std,
        })
    }

    /// Weighted mean cross-entropy of row logits against class labels.
    /// Rows with weight 0 are ignored.
    pub fn cross_entropy(self, labels: &[usize], weights: &[f64]) -> Var<'t> {
        let (out, probs) = {
            let z = self.value();
            let (rows, cols) = z.dims2();
            assert!(
                labels.len() == rows && weights.len() == rows,
                "cross_entropy: shape mismatch {:?} vs [{}]",
                z.shape(),
                labels.len()
            );
            let mut probs = vec![0.0; rows * cols];
            let mut loss = 0.0;
            let wsum: f64 = weights.iter().sum();
            for i in 0..rows {
                let row = z.row(i);
                let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let s: f64 = row.iter().map(|x| (x - m).exp()).sum();
                let lse = m + s.ln();
                for j in 0..cols {
                    probs[i * cols + j] = (row[j] - lse).exp();
                }
                loss += weights[i] * (lse - row[labels[i]]);
            }
            let loss = if wsum > 0.0 { loss / wsum } else { 0.0 };
            (Tensor::scalar(loss), probs)
        };
        self.tape.record("cross_entropy", out, &[self.id], || Op::CrossEntropy {
            logits: self.id,
            labels: labels.to_vec(),
            weights: weights.to_vec(),
            probs,
        })
    }

    /// Mean binary cross-entropy on raw scores (before the sigmoid).
    pub fn bce_logits(self, targets: &[f64]) -> Var<'t> {
        let out = {
            let s = self.value();
            assert!(
                s.len() == targets.len(),
                "bce_logits: shape mismatch {:?} vs [{}]",
                s.shape(),
                targets.len()
            );
            let total: f64 = s
                .data()
                .iter()
                .zip(targets)
                .map(|(&x, &t)| x.max(0.0) - x * t + (-x.abs()).exp().ln_1p())
                .sum();
            Tensor::scalar(total / targets.len() as f64)
        };
        self.tape.record("bce_logits", out, &[self.id], || Op::BceLogits {
            score: self.id,
            targets: targets.to_vec(),
        })
    }

    /// Per-row classification margin `z[c*] − max_{c≠c*} z[c]`.
    pub fn margin_rows(self, labels: &[usize]) -> Var<'t> {
        let (out, rival) = {
            let z = self.value();
            let (rows, cols) = z.dims2();
            assert!(
                labels.len() == rows && cols >= 2,
                "margin_rows: shape mismatch {:?} vs [{}]",
                z.shape(),
                labels.len()
            );
            let mut rival = Vec::with_capacity(rows);
            let mut m = Vec::with_capacity(rows);
            for i in 0..rows {
                let row = z.row(i);
                let mut best = usize::MAX;
                for c in 0..cols {
                    if c != labels[i] && (best == usize::MAX || row[c] > row[best]) {
                        best = c;
                    }
                }
                rival.push(best);
                m.push(row[labels[i]] - row[best]);
            }
            (Tensor::vector(m), rival)
        };
        self.tape.record("margin_rows", out, &[self.id], || Op::MarginRows {
            logits: self.id,
            labels: labels.to_vec(),
            rival,
        })
    }
}

/// Interpolation slots for positions into a table with rows `0..=max_index`.
///
/// Positions at or beyond `max_index` clamp to that row; `+inf` positions map
/// to `inf_row` when given. Integer positions reproduce the table row exactly.
pub fn interp_slots(positions: &[f64], max_index: usize, inf_row: Option<usize>) -> Vec<InterpSlot> {
    positions
        .iter()
        .map(|&x| {
            if x.is_infinite() && x > 0.0 {
                InterpSlot::Fixed(inf_row.unwrap_or(max_index))
            } else if x >= max_index as f64 {
                InterpSlot::Fixed(max_index)
            } else {
                let x = x.max(0.0);
                let lower = x.floor() as usize;
                InterpSlot::Lerp {
                    lower,
                    eta: x - lower as f64,
                }
            }
        })
        .collect()
}

impl<'t> Add for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: Var<'t>) -> Var<'t> {
        self.binary(rhs, "add", |a, b| a + b, Op::Add)
    }
}

impl<'t> Sub for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: Var<'t>) -> Var<'t> {
        self.binary(rhs, "sub", |a, b| a - b, Op::Sub)
    }
}

impl<'t> Mul for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: Var<'t>) -> Var<'t> {
        self.binary(rhs, "mul", |a, b| a * b, Op::Mul)
    }
}

impl<'t> Div for Var<'t> {
    type Output = Var<'t>;
    fn div(self, rhs: Var<'t>) -> Var<'t> {
        self.binary(rhs, "div", |a, b| a / b, Op::Div)
    }
}

impl<'t> Neg for Var<'t> {
    type Output = Var<'t>;
    fn neg(self) -> Var<'t> {
        self.scale(-1.0)
    }
}
