use grelax_autodiff::{Tensor, Var};

use super::{attend, ffn_block, init_ffn, init_linear, linear, prob_matrix, readout, Bound, ForwardInput, Hyper, ModelError, ParamSet};

pub(super) fn init(h: &Hyper, ps: &mut ParamSet) {
    let d = h.hidden;
    init_linear(ps, "input", h.in_dim, d);
    init_linear(ps, "node_pe", h.rrwp_steps, d);
    init_linear(ps, "pair_pe", h.rrwp_steps, d);
    for l in 0..h.layers {
        for name in ["q", "k", "v", "eb", "out"] {
            init_linear(ps, &format!("layer{l}.{name}"), d, d);
        }
        ps.xavier(&format!("layer{l}.ew"), d, d);
        ps.xavier(&format!("layer{l}.ev"), d, d);
        ps.xavier(&format!("layer{l}.score"), d, h.heads);
        ps.ones(&format!("layer{l}.theta1"), &[d]);
        ps.normal(&format!("layer{l}.theta2"), &[d], 0.1);
        init_ffn(ps, &format!("layer{l}"), d);
    }
    init_linear(ps, "head", d, h.out_dim);
}

/// Random-walk probabilities `[I, M, …, M^{K-1}]` with `M = D⁻¹Ã`, as an
/// `[n², K]` tensor whose row `i·n + j` holds the pair `(i, j)`.
/// Rows of `M` for isolated nodes are zero.
pub fn rrwp<'t>(adj: Var<'t>, k: usize) -> Var<'t> {
    let n = adj.value().dims2().0;
    let m = adj.mul_col(adj.sum_rows().safe_recip());
    let mut power = adj.tape().constant(Tensor::identity(n));
    let mut slices = Vec::with_capacity(k);
    for step in 0..k {
        if step > 0 {
            power = power.matmul(m);
        }
        slices.push(power.reshape(&[n * n, 1]));
    }
    Var::concat_cols(&slices)
}

pub(super) fn forward<'t>(hyper: &Hyper, p: &Bound<'t>, input: &ForwardInput<'t, '_>) -> Result<Var<'t>, ModelError> {
    let tape = input.adj.tape();
    let n = input.n();
    let (d, heads) = (hyper.hidden, hyper.heads);
    let dh = d / heads;
    let t = input.toggles;
    let walk_adj = if t.grit_rrwp_grad { input.adj } else { input.adj.detach() };
    let deg_adj = if t.grit_deg_grad { input.adj } else { input.adj.detach() };
    let pe = rrwp(walk_adj, hyper.rrwp_steps);
    let diag: Vec<usize> = (0..n).map(|i| i * n + i).collect();
    let log_deg = deg_adj.sum_rows().add_scalar(1.0).log();
    let q = prob_matrix(tape, input.attention_probs(), n)?;

    let mut h = linear(p, "input", tape.constant(input.features.clone())) + linear(p, "node_pe", pe.gather_rows(&diag));
    let mut e = linear(p, "pair_pe", pe);
    for l in 0..hyper.layers {
        let name = |s: &str| format!("layer{l}.{s}");
        let x = h.layer_norm();
        let ex = e.layer_norm();
        let (qv, kv, vv) = (linear(p, &name("q"), x), linear(p, &name("k"), x), linear(p, &name("v"), x));
        let e_hat = (qv.pair_sum(kv) * ex.matmul(p.get(&name("ew"))) + linear(p, &name("eb"), ex)).gelu();
        let scores = e_hat.matmul(p.get(&name("score"))).scale(1.0 / (dh as f64).sqrt());
        let ev = e_hat.matmul(p.get(&name("ev")));
        let heads_out = attend(
            heads,
            vv,
            q,
            |hd| scores.slice_cols(hd, hd + 1).reshape(&[n, n]),
            |hd, alpha| Some(alpha.pair_weighted_sum(ev.slice_cols(hd * dh, (hd + 1) * dh))),
        );
        let out = linear(p, &name("out"), heads_out);
        let scaled = out.mul_row(p.get(&name("theta1"))) + out.mul_row(p.get(&name("theta2"))).mul_col(log_deg);
        h = ffn_block(p, &format!("layer{l}"), h + scaled);
        e = e + e_hat;
    }
    readout(hyper, p, h, input.node_probs)
}
