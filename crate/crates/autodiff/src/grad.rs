//! Reverse-mode rules, one per recorded primitive.

use crate::kernels::gemm;
use crate::ops::gelu_parts;
use crate::tape::{InterpSlot, Node, NodeId, Op};

/// Accumulation target for an input gradient, or `None` if the input does
/// not require one.
fn slot<'g>(nodes: &[Node], grads: &'g mut [Option<Vec<f64>>], id: NodeId) -> Option<&'g mut Vec<f64>> {
    if !nodes[id].requires_grad {
        return None;
    }
    let len = nodes[id].value.len();
    Some(grads[id].get_or_insert_with(|| vec![0.0; len]))
}

fn acc_elementwise(
    nodes: &[Node],
    grads: &mut [Option<Vec<f64>>],
    id: NodeId,
    g: &[f64],
    f: impl Fn(usize, f64) -> f64,
) {
    if let Some(dst) = slot(nodes, grads, id) {
        for (i, (d, &gi)) in dst.iter_mut().zip(g).enumerate() {
            *d += f(i, gi);
        }
    }
}

pub(crate) fn propagate(nodes: &[Node], id: NodeId, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
    let node = &nodes[id];
    let out = node.value.data();
    let val = |i: NodeId| nodes[i].value.data();
    match &node.op {
        Op::Leaf | Op::Constant => {}
        Op::MatMul { a, b, ta, tb } => {
            let (a, b, ta, tb) = (*a, *b, *ta, *tb);
            let (ar, ac) = nodes[a].value.dims2();
            let (br, bc) = nodes[b].value.dims2();
            let (m, k) = if ta { (ac, ar) } else { (ar, ac) };
            let n = if tb { br } else { bc };
            let (av, bv) = (val(a), val(b));
            if let Some(ga) = slot(nodes, grads, a) {
                if ta {
                    // A stored k×m: dA = op(B) · gᵀ
                    gemm(k, n, m, bv, tb, g, true, ga, 1.0);
                } else {
                    // dA = g · op(B)ᵀ
                    gemm(m, n, k, g, false, bv, !tb, ga, 1.0);
                }
            }
            if let Some(gb) = slot(nodes, grads, b) {
                if tb {
                    // B stored n×k: dB = gᵀ · op(A)
                    gemm(n, m, k, g, true, av, ta, gb, 1.0);
                } else {
                    // dB = op(A)ᵀ · g
                    gemm(k, m, n, av, !ta, g, false, gb, 1.0);
                }
            }
        }
        Op::BatchMatMul { a, b, tb } => {
            let (a, b, tb) = (*a, *b, *tb);
            let sa = nodes[a].value.shape().to_vec();
            let sb = nodes[b].value.shape().to_vec();
            let (batch, m, k) = (sa[0], sa[1], sa[2]);
            let n = if tb { sb[1] } else { sb[2] };
            let (av, bv) = (val(a), val(b));
            if let Some(ga) = slot(nodes, grads, a) {
                for bi in 0..batch {
                    gemm(
                        m,
                        n,
                        k,
                        &g[bi * m * n..(bi + 1) * m * n],
                        false,
                        &bv[bi * k * n..(bi + 1) * k * n],
                        !tb,
                        &mut ga[bi * m * k..(bi + 1) * m * k],
                        1.0,
                    );
                }
            }
            if let Some(gb) = slot(nodes, grads, b) {
                for bi in 0..batch {
                    let gs = &g[bi * m * n..(bi + 1) * m * n];
                    let asl = &av[bi * m * k..(bi + 1) * m * k];
                    let dst = &mut gb[bi * k * n..(bi + 1) * k * n];
                    if tb {
                        gemm(n, m, k, gs, true, asl, false, dst, 1.0);
                    } else {
                        gemm(k, m, n, asl, true, gs, false, dst, 1.0);
                    }
                }
            }
        }
        Op::Transpose(a) => {
            let (r, c) = nodes[*a].value.dims2();
            if let Some(ga) = slot(nodes, grads, *a) {
                for i in 0..r {
                    for j in 0..c {
                        ga[i * c + j] += g[j * r + i];
                    }
                }
            }
        }
        Op::Add(a, b) => {
            acc_elementwise(nodes, grads, *a, g, |_, gi| gi);
            acc_elementwise(nodes, grads, *b, g, |_, gi| gi);
        }
        Op::Sub(a, b) => {
            acc_elementwise(nodes, grads, *a, g, |_, gi| gi);
            acc_elementwise(nodes, grads, *b, g, |_, gi| -gi);
        }
        Op::Mul(a, b) => {
            let (av, bv) = (val(*a), val(*b));
            acc_elementwise(nodes, grads, *a, g, |i, gi| gi * bv[i]);
            acc_elementwise(nodes, grads, *b, g, |i, gi| gi * av[i]);
        }
        Op::Div(a, b) => {
            let (av, bv) = (val(*a), val(*b));
            acc_elementwise(nodes, grads, *a, g, |i, gi| gi / bv[i]);
            acc_elementwise(nodes, grads, *b, g, |i, gi| -gi * av[i] / (bv[i] * bv[i]));
        }
        Op::AddRow(a, r) => {
            acc_elementwise(nodes, grads, *a, g, |_, gi| gi);
            let cols = nodes[*r].value.len();
            if let Some(gr) = slot(nodes, grads, *r) {
                for (i, gi) in g.iter().enumerate() {
                    gr[i % cols] += gi;
                }
            }
        }
        Op::MulRow(a, r) => {
            let (av, rv) = (val(*a), val(*r));
            let cols = rv.len();
            acc_elementwise(nodes, grads, *a, g, |i, gi| gi * rv[i % cols]);
            if let Some(gr) = slot(nodes, grads, *r) {
                for (i, gi) in g.iter().enumerate() {
                    gr[i % cols] += gi * av[i];
                }
            }
        }
        Op::MulCol(a, c) => {
            let (av, cv) = (val(*a), val(*c));
            let cols = av.len() / cv.len().max(1);
            acc_elementwise(nodes, grads, *a, g, |i, gi| gi * cv[i / cols]);
            if let Some(gc) = slot(nodes, grads, *c) {
                for (i, gi) in g.iter().enumerate() {
                    gc[i / cols] += gi * av[i];
                }
            }
        }
        Op::Scale(a, s) => acc_elementwise(nodes, grads, *a, g, |_, gi| gi * s),
        Op::AddScalar(a) => acc_elementwise(nodes, grads, *a, g, |_, gi| gi),
        Op::Exp(a) => acc_elementwise(nodes, grads, *a, g, |i, gi| gi * out[i]),
        Op::Log(a) => {
            let av = val(*a);
            // 0·∞ from a -inf entry that the consumer ignored counts as 0.
            acc_elementwise(nodes, grads, *a, g, |i, gi| if gi == 0.0 { 0.0 } else { gi / av[i] });
        }
        Op::Tanh(a) => acc_elementwise(nodes, grads, *a, g, |i, gi| gi * (1.0 - out[i] * out[i])),
        Op::Sigmoid(a) => acc_elementwise(nodes, grads, *a, g, |i, gi| gi * out[i] * (1.0 - out[i])),
        Op::Relu(a) => {
            let av = val(*a);
            acc_elementwise(nodes, grads, *a, g, |i, gi| if av[i] > 0.0 { gi } else { 0.0 });
        }
        Op::Gelu(a) => {
            let av = val(*a);
            acc_elementwise(nodes, grads, *a, g, |i, gi| gi * gelu_parts(av[i]).1);
        }
        Op::SafeRecip(a) => {
            let av = val(*a);
            acc_elementwise(nodes, grads, *a, g, |i, gi| {
                if av[i] > 0.0 {
                    -gi * out[i] * out[i]
                } else {
                    0.0
                }
            });
        }
        Op::SafeRsqrt(a) => {
            let av = val(*a);
            acc_elementwise(nodes, grads, *a, g, |i, gi| {
                if av[i] > 0.0 {
                    -0.5 * gi * out[i] / av[i]
                } else {
                    0.0
                }
            });
        }
        Op::SoftmaxRows(a) => {
            let (_, cols) = nodes[id].value.rows_cols();
            if let Some(ga) = slot(nodes, grads, *a) {
                for (r, (gr, yr)) in g.chunks(cols).zip(out.chunks(cols)).enumerate() {
                    let dot: f64 = gr.iter().zip(yr).map(|(x, y)| x * y).sum();
                    for j in 0..cols {
                        ga[r * cols + j] += yr[j] * (gr[j] - dot);
                    }
                }
            }
        }
        Op::WeightedSoftmaxRows { w, q, scaled, denom } => {
            let (_, cols) = nodes[id].value.rows_cols();
            let mut dots = Vec::with_capacity(denom.len());
            for (gr, yr) in g.chunks(cols).zip(out.chunks(cols)) {
                dots.push(gr.iter().zip(yr).map(|(x, y)| x * y).sum::<f64>());
            }
            if let Some(gw) = slot(nodes, grads, *w) {
                for (r, dot) in dots.iter().enumerate() {
                    if denom[r] == 0.0 {
                        continue;
                    }
                    for j in 0..cols {
                        let k = r * cols + j;
                        gw[k] += out[k] * (g[k] - dot);
                    }
                }
            }
            if let Some(gq) = slot(nodes, grads, *q) {
                for (r, dot) in dots.iter().enumerate() {
                    if denom[r] == 0.0 {
                        continue;
                    }
                    for j in 0..cols {
                        let k = r * cols + j;
                        gq[k] += scaled[k] / denom[r] * (g[k] - dot);
                    }
                }
            }
        }
        Op::Sum(a) => {
            if let Some(ga) = slot(nodes, grads, *a) {
                ga.iter_mut().for_each(|x| *x += g[0]);
            }
        }
        Op::Mean(a) => {
            let n = nodes[*a].value.len() as f64;
            if let Some(ga) = slot(nodes, grads, *a) {
                ga.iter_mut().for_each(|x| *x += g[0] / n);
            }
        }
        Op::SumRows(a) => {
            let (_, cols) = nodes[*a].value.rows_cols();
            if let Some(ga) = slot(nodes, grads, *a) {
                for (i, x) in ga.iter_mut().enumerate() {
                    *x += g[i / cols];
                }
            }
        }
        Op::SumCols(a) => {
            let (_, cols) = nodes[*a].value.dims2();
            if let Some(ga) = slot(nodes, grads, *a) {
                for (i, x) in ga.iter_mut().enumerate() {
                    *x += g[i % cols];
                }
            }
        }
        Op::ConcatCols(parts) => {
            let rows = nodes[id].value.dims2().0;
            let total = nodes[id].value.dims2().1;
            let mut offset = 0;
            for &p in parts {
                let c = nodes[p].value.dims2().1;
                if let Some(gp) = slot(nodes, grads, p) {
                    for i in 0..rows {
                        for j in 0..c {
                            gp[i * c + j] += g[i * total + offset + j];
                        }
                    }
                }
                offset += c;
            }
        }
        Op::ConcatRows(parts) => {
            let mut offset = 0;
            for &p in parts {
                let len = nodes[p].value.len();
                if let Some(gp) = slot(nodes, grads, p) {
                    for (d, s) in gp.iter_mut().zip(&g[offset..offset + len]) {
                        *d += s;
                    }
                }
                offset += len;
            }
        }
        Op::SliceCols { a, start } => {
            let (rows, cols) = nodes[*a].value.dims2();
            let w = nodes[id].value.dims2().1;
            if let Some(ga) = slot(nodes, grads, *a) {
                for i in 0..rows {
                    for j in 0..w {
                        ga[i * cols + start + j] += g[i * w + j];
                    }
                }
            }
        }
        Op::GatherRows { a, index } => {
            let cols = nodes[*a].value.dims2().1;
            if let Some(ga) = slot(nodes, grads, *a) {
                for (r, &src) in index.iter().enumerate() {
                    for j in 0..cols {
                        ga[src * cols + j] += g[r * cols + j];
                    }
                }
            }
        }
        Op::Reshape(a) => acc_elementwise(nodes, grads, *a, g, |_, gi| gi),
        Op::Pad2d(a) => {
            let (r, c) = nodes[*a].value.dims2();
            let cols = nodes[id].value.dims2().1;
            if let Some(ga) = slot(nodes, grads, *a) {
                for i in 0..r {
                    for j in 0..c {
                        ga[i * c + j] += g[i * cols + j];
                    }
                }
            }
        }
        Op::MaskedFill { a, mask } => {
            acc_elementwise(nodes, grads, *a, g, |i, gi| if mask[i] { 0.0 } else { gi });
        }
        Op::Diag(a) => {
            let n = nodes[id].value.len();
            if let Some(ga) = slot(nodes, grads, *a) {
                for i in 0..n {
                    ga[i * n + i] += g[i];
                }
            }
        }
        Op::ScatterSym { values, pairs } => {
            let n = nodes[id].value.dims2().0;
            if let Some(gv) = slot(nodes, grads, *values) {
                for (k, &(i, j)) in pairs.iter().enumerate() {
                    gv[k] += g[i * n + j] + g[j * n + i];
                }
            }
        }
        Op::PairSum(a, b) => {
            let (n, d) = nodes[*a].value.dims2();
            let m = nodes[*b].value.dims2().0;
            if let Some(ga) = slot(nodes, grads, *a) {
                for i in 0..n {
                    for j in 0..m {
                        let src = &g[(i * m + j) * d..(i * m + j + 1) * d];
                        for (x, s) in ga[i * d..(i + 1) * d].iter_mut().zip(src) {
                            *x += s;
                        }
                    }
                }
            }
            if let Some(gb) = slot(nodes, grads, *b) {
                for i in 0..n {
                    for j in 0..m {
                        let src = &g[(i * m + j) * d..(i * m + j + 1) * d];
                        for (x, s) in gb[j * d..(j + 1) * d].iter_mut().zip(src) {
                            *x += s;
                        }
                    }
                }
            }
        }
        Op::PairWeightedSum { alpha, edges } => {
            let (n, m) = nodes[*alpha].value.dims2();
            let d = nodes[*edges].value.dims2().1;
            let (av, ev) = (val(*alpha), val(*edges));
            if let Some(ga) = slot(nodes, grads, *alpha) {
                for i in 0..n {
                    let gi = &g[i * d..(i + 1) * d];
                    for j in 0..m {
                        let e = &ev[(i * m + j) * d..(i * m + j + 1) * d];
                        ga[i * m + j] += gi.iter().zip(e).map(|(x, y)| x * y).sum::<f64>();
                    }
                }
            }
            if let Some(ge) = slot(nodes, grads, *edges) {
                for i in 0..n {
                    let gi = &g[i * d..(i + 1) * d];
                    for j in 0..m {
                        let w = av[i * m + j];
                        if w == 0.0 {
                            continue;
                        }
                        for (x, s) in ge[(i * m + j) * d..(i * m + j + 1) * d].iter_mut().zip(gi) {
                            *x += w * s;
                        }
                    }
                }
            }
        }
        Op::PathSums { adj, paths } => {
            let m = nodes[*adj].value.dims2().1;
            let av = val(*adj);
            if let Some(ga) = slot(nodes, grads, *adj) {
                for (p, &gp) in g.iter().enumerate() {
                    if gp == 0.0 {
                        continue;
                    }
                    for &(u, v) in &paths.edges[paths.offsets[p]..paths.offsets[p + 1]] {
                        let k = u as usize * m + v as usize;
                        ga[k] -= gp / (av[k] * av[k]);
                    }
                }
            }
        }
        Op::InterpRows { table, pos, slots } => {
            let d = nodes[*table].value.dims2().1;
            let tv = val(*table);
            if let Some(gt) = slot(nodes, grads, *table) {
                for (r, s) in slots.iter().enumerate() {
                    let gr = &g[r * d..(r + 1) * d];
                    match *s {
                        InterpSlot::Fixed(k) => {
                            for (x, y) in gt[k * d..(k + 1) * d].iter_mut().zip(gr) {
                                *x += y;
                            }
                        }
                        InterpSlot::Lerp { lower, eta } => {
                            for j in 0..d {
                                gt[lower * d + j] += (1.0 - eta) * gr[j];
                                gt[(lower + 1) * d + j] += eta * gr[j];
                            }
                        }
                    }
                }
            }
            if let Some(p) = pos {
                if let Some(gp) = slot(nodes, grads, *p) {
                    for (r, s) in slots.iter().enumerate() {
                        if let InterpSlot::Lerp { lower, .. } = *s {
                            let gr = &g[r * d..(r + 1) * d];
                            gp[r] += (0..d)
                                .map(|j| gr[j] * (tv[(lower + 1) * d + j] - tv[lower * d + j]))
                                .sum::<f64>();
                        }
                    }
                }
            }
        }
        Op::NoisyOr { adj, p } => {
            let (n, m) = nodes[*adj].value.dims2();
            let (av, pv) = (val(*adj), val(*p));
            // Products of (1 - a_ij p_j) with factor j left out, via prefix/suffix.
            let mut excl = vec![0.0; n * m];
            let mut prefix = vec![1.0; m + 1];
            let mut suffix = vec![1.0; m + 1];
            for i in 0..n {
                let f = |j: usize| 1.0 - av[i * m + j] * pv[j];
                for j in 0..m {
                    prefix[j + 1] = prefix[j] * f(j);
                }
                for j in (0..m).rev() {
                    suffix[j] = suffix[j + 1] * f(j);
                }
                for j in 0..m {
                    excl[i * m + j] = prefix[j] * suffix[j + 1];
                }
            }
            if let Some(ga) = slot(nodes, grads, *adj) {
                for i in 0..n {
                    for j in 0..m {
                        ga[i * m + j] += g[i] * pv[j] * excl[i * m + j];
                    }
                }
            }
            if let Some(gp) = slot(nodes, grads, *p) {
                for i in 0..n {
                    for j in 0..m {
                        gp[j] += g[i] * av[i * m + j] * excl[i * m + j];
                    }
                }
            }
        }
        Op::LayerNorm { a, inv_std } => {
            let (_, cols) = nodes[id].value.rows_cols();
            if let Some(ga) = slot(nodes, grads, *a) {
                for (r, (gr, yr)) in g.chunks(cols).zip(out.chunks(cols)).enumerate() {
                    let mg = gr.iter().sum::<f64>() / cols as f64;
                    let mgy = gr.iter().zip(yr).map(|(x, y)| x * y).sum::<f64>() / cols as f64;
                    for j in 0..cols {
                        ga[r * cols + j] += inv_std[r] * (gr[j] - mg - yr[j] * mgy);
                    }
                }
            }
        }
        Op::CrossEntropy {
            logits,
            labels,
            weights,
            probs,
        } => {
            let cols = nodes[*logits].value.dims2().1;
            let wsum: f64 = weights.iter().sum();
            if wsum <= 0.0 {
                return;
            }
            if let Some(gl) = slot(nodes, grads, *logits) {
                for (i, (&y, &w)) in labels.iter().zip(weights).enumerate() {
                    let s = g[0] * w / wsum;
                    for j in 0..cols {
                        let ind = if j == y { 1.0 } else { 0.0 };
                        gl[i * cols + j] += s * (probs[i * cols + j] - ind);
                    }
                }
            }
        }
        Op::BceLogits { score, targets } => {
            let sv = val(*score);
            let n = targets.len() as f64;
            if let Some(gs) = slot(nodes, grads, *score) {
                for (i, x) in gs.iter_mut().enumerate() {
                    let sig = 1.0 / (1.0 + (-sv[i]).exp());
                    *x += g[0] * (sig - targets[i]) / n;
                }
            }
        }
        Op::MarginRows { logits, labels, rival } => {
            let cols = nodes[*logits].value.dims2().1;
            if let Some(gl) = slot(nodes, grads, *logits) {
                for (i, (&y, &r)) in labels.iter().zip(rival).enumerate() {
                    gl[i * cols + y] += g[i];
                    gl[i * cols + r] -= g[i];
                }
            }
        }
    }
}
