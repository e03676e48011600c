use grelax_autodiff::{Tensor, Var};

use super::{init_ffn, init_linear, linear, readout, Bound, ForwardInput, Hyper, ModelError, ParamSet};

pub(super) fn init(h: &Hyper, ps: &mut ParamSet) {
    init_linear(ps, "input", h.in_dim, h.hidden);
    for l in 0..h.layers {
        init_linear(ps, &format!("layer{l}.conv"), h.hidden, h.hidden);
        init_ffn(ps, &format!("layer{l}"), h.hidden);
    }
    init_linear(ps, "head", h.hidden, h.out_dim);
}

/// `D̃^{-1/2} (Ã + I) D̃^{-1/2}` with `D̃ = deg + 1`.
pub(crate) fn normalized_adjacency<'t>(adj: Var<'t>) -> Var<'t> {
    let n = adj.value().dims2().0;
    let looped = adj + adj.tape().constant(Tensor::identity(n));
    let r = looped.sum_rows().safe_rsqrt();
    looped.mul_col(r).mul_row(r)
}

pub(super) fn forward<'t>(hyper: &Hyper, p: &Bound<'t>, input: &ForwardInput<'t, '_>) -> Result<Var<'t>, ModelError> {
    let tape = input.adj.tape();
    let a_hat = normalized_adjacency(input.adj);
    let mut h = linear(p, "input", tape.constant(input.features.clone()));
    for l in 0..hyper.layers {
        let conv = linear(p, &format!("layer{l}.conv"), a_hat.matmul(h.layer_norm())).gelu();
        h = super::ffn_block(p, &format!("layer{l}"), h + conv);
    }
    readout(hyper, p, h, input.node_probs)
}
