use grelax_autodiff::{interp_slots, InterpSlot, Tensor, Var};

use super::{attend, ffn_block, init_ffn, init_linear, linear, prob_matrix, Bound, ForwardInput, Hyper, ModelError, ParamSet};
use crate::graph::Task;
use crate::paths::{bfs_distances, spd_slots, FrozenPaths};

pub(super) fn init(h: &Hyper, ps: &mut ParamSet) {
    let d = h.hidden;
    init_linear(ps, "input", h.in_dim, d);
    ps.normal("degree", &[h.max_degree + 1, d], 0.5);
    ps.normal("virtual", &[1, d], 0.5);
    // Rows: distances 0..=max, unreachable, virtual.
    ps.normal("spd", &[h.max_distance + 3, h.heads], 0.5);
    for l in 0..h.layers {
        for name in ["q", "k", "v", "out"] {
            init_linear(ps, &format!("layer{l}.{name}"), d, d);
        }
        init_ffn(ps, &format!("layer{l}"), d);
    }
    init_linear(ps, "head", d, h.out_dim);
}

/// Degree embeddings `[n, d]` from the table `z` (`[D_max + 1, d]`).
///
/// Relaxed degrees interpolate between neighbouring rows; otherwise the
/// degree is rounded and receives no gradient. Degrees clamp at `D_max`.
pub fn graphormer_degree_pe<'t>(deg: Var<'t>, z: Var<'t>, relaxed: bool) -> Var<'t> {
    let d_max = z.value().dims2().0 - 1;
    let values = deg.value().data().to_vec();
    if relaxed {
        z.interp_rows(Some(deg), interp_slots(&values, d_max, None))
    } else {
        let rounded: Vec<f64> = values.iter().map(|x| x.round()).collect();
        z.interp_rows(None, interp_slots(&rounded, d_max, None))
    }
}

/// Per-pair SPD bias `[N², heads]`, `N = n + 1` when a virtual node is appended.
fn spd_bias_matrix<'t>(hyper: &Hyper, p: &Bound<'t>, adj: Var<'t>, relaxed: bool, virtual_node: bool) -> Var<'t> {
    let n = adj.value().dims2().0;
    let s_max = hyper.max_distance;
    let (dist, sums) = if relaxed {
        let frozen = FrozenPaths::of(&adj.value());
        let sums = adj.path_sums(frozen.table.clone());
        (frozen.dist, Some(sums))
    } else {
        (bfs_distances(&adj.value(), 0.5), None)
    };
    let slots = spd_slots(&dist, s_max);
    let total = if virtual_node { n + 1 } else { n };
    let mut all = Vec::with_capacity(total * total);
    for i in 0..total {
        for j in 0..total {
            all.push(if i == n || j == n {
                InterpSlot::Fixed(s_max + 2)
            } else {
                slots[i * n + j]
            });
        }
    }
    let pos = sums.map(|s| s.pad2d(total, total).reshape(&[total * total]));
    p.get("spd").interp_rows(pos, all)
}

pub(super) fn forward<'t>(hyper: &Hyper, p: &Bound<'t>, input: &ForwardInput<'t, '_>) -> Result<Var<'t>, ModelError> {
    let tape = input.adj.tape();
    let n = input.n();
    let (d, heads) = (hyper.hidden, hyper.heads);
    let dh = d / heads;
    let virtual_node = hyper.task == Task::Graph;
    let total = if virtual_node { n + 1 } else { n };
    let t = input.toggles;

    let deg = input.adj.sum_rows();
    let mut h = linear(p, "input", tape.constant(input.features.clone()))
        + graphormer_degree_pe(deg, p.get("degree"), t.graphormer_deg);
    if virtual_node {
        h = Var::concat_rows(&[h, p.get("virtual")]);
    }
    let bias = spd_bias_matrix(hyper, p, input.adj, t.graphormer_spd, virtual_node);
    let probs = input.attention_probs().map(|pr| {
        if virtual_node {
            Var::concat_rows(&[pr.reshape(&[n, 1]), tape.constant(Tensor::ones(&[1, 1]))]).reshape(&[total])
        } else {
            pr
        }
    });
    let q = prob_matrix(tape, probs, total)?;
    let scale = 1.0 / (dh as f64).sqrt();
    for l in 0..hyper.layers {
        let name = |s: &str| format!("layer{l}.{s}");
        let x = h.layer_norm();
        let (qv, kv, vv) = (linear(p, &name("q"), x), linear(p, &name("k"), x), linear(p, &name("v"), x));
        let heads_out = attend(
            heads,
            vv,
            q,
            |hd| {
                let s = qv.slice_cols(hd * dh, (hd + 1) * dh).matmul_t(kv.slice_cols(hd * dh, (hd + 1) * dh));
                s.scale(scale) + bias.slice_cols(hd, hd + 1).reshape(&[total, total])
            },
            |_, _| None,
        );
        h = ffn_block(p, &format!("layer{l}"), h + linear(p, &name("out"), heads_out));
    }
    let h = h.layer_norm();
    Ok(match hyper.task {
        Task::Node => linear(p, "head", h),
        Task::Graph => linear(p, "head", h.gather_rows(&[n])),
    })
}
