use std::borrow::Cow;

use grelax_autodiff::{Tensor, Var};

use super::{ffn_block, init_ffn, init_linear, linear, prob_matrix, readout, Bound, ForwardInput, Hyper, ModelError, ParamSet, SpectralBase};
use crate::graph::{laplacian_sym, laplacian_sym_var};
use crate::spectral::{degenerate_alignment, eig_sym, perturb_top_k, PerturbationOperator, DEGENERACY_TOL};

pub(super) fn init(h: &Hyper, ps: &mut ParamSet) {
    let d = h.hidden;
    let pe = h.pe_dim;
    init_linear(ps, "input", h.in_dim, d - pe);
    init_linear(ps, "lpe.embed", 2, pe);
    for name in ["q", "k", "v", "out"] {
        init_linear(ps, &format!("lpe.{name}"), pe, pe);
    }
    init_ffn(ps, "lpe", pe);
    for l in 0..h.layers {
        for name in ["q_real", "k_real", "q_fake", "k_fake", "v", "out"] {
            init_linear(ps, &format!("layer{l}.{name}"), d, d);
        }
        init_ffn(ps, &format!("layer{l}"), d);
    }
    init_linear(ps, "head", d, h.out_dim);
}

/// Per-node encodings `[n, pe_dim]` from eigenvalues `[k']` and eigenvectors
/// `[n, k']`. Each node sees `k` tokens `(λ_m, U_im)`, zero-padded when
/// `k' < k`, passed through a one-layer transformer and summed.
pub fn san_lpe<'t>(hyper: &Hyper, p: &Bound<'t>, values: Var<'t>, vectors: Var<'t>) -> Var<'t> {
    let tape = values.tape();
    let (n, kk) = vectors.value().dims2();
    let (k, pe) = (hyper.eig_k, hyper.pe_dim);
    let (values, vectors) = if kk < k {
        (values.reshape(&[1, kk]).pad2d(1, k), vectors.pad2d(n, k))
    } else {
        (values.reshape(&[1, k]), vectors)
    };
    let lambdas = tape.constant(Tensor::ones(&[n, 1])).matmul(values);
    let tokens = Var::concat_cols(&[lambdas.reshape(&[n * k, 1]), vectors.reshape(&[n * k, 1])]);
    let x = linear(p, "lpe.embed", tokens);
    let a = x.layer_norm();
    let split = |name: &str| linear(p, name, a).reshape(&[n, k, pe]);
    let att = split("lpe.q")
        .bmm_t(split("lpe.k"))
        .scale(1.0 / (pe as f64).sqrt())
        .softmax_rows();
    let o = att.bmm(split("lpe.v")).reshape(&[n * k, pe]);
    let x = ffn_block(p, "lpe", x + linear(p, "lpe.out", o));
    let mut pool = Tensor::zeros(&[k * pe, pe]);
    for m in 0..k {
        for c in 0..pe {
            pool.set2(m * pe + c, c, 1.0);
        }
    }
    x.reshape(&[n, k * pe]).matmul(tape.constant(pool))
}

/// Two-branch SAN attention weights.
///
/// With `relaxed`, the real branch is weighted by `Ã + I` and the fake branch
/// by `1 − (Ã + I)`, each also by the node probabilities. Otherwise both
/// weights come from `Ã` thresholded at 0.5.
pub fn san_attention<'t>(
    w_real: Var<'t>,
    w_fake: Var<'t>,
    adj: Var<'t>,
    probs: Option<Var<'t>>,
    gamma: f64,
    relaxed: bool,
) -> Result<Var<'t>, ModelError> {
    let tape = adj.tape();
    let n = adj.value().dims2().0;
    let looped = if relaxed {
        adj + tape.constant(Tensor::identity(n))
    } else {
        let mut mask = adj.value().map(|x| if x > 0.5 { 1.0 } else { 0.0 });
        for i in 0..n {
            mask.set2(i, i, 1.0);
        }
        tape.constant(mask)
    };
    let pm = prob_matrix(tape, probs, n)?;
    let real = w_real.weighted_softmax_rows(looped * pm);
    let fake = w_fake.weighted_softmax_rows(looped.rsub_scalar(1.0) * pm);
    Ok(fake.scale(gamma / (1.0 + gamma)) + real.scale(1.0 / (1.0 + gamma)))
}

/// Eigenpairs feeding the encodings: first-order perturbed from the base
/// with `san_lap_pert`, otherwise an exact constant decomposition.
fn spectrum<'t>(hyper: &Hyper, input: &ForwardInput<'t, '_>) -> Result<(Var<'t>, Var<'t>), ModelError> {
    let tape = input.adj.tape();
    let n = input.n();
    let k = hyper.eig_k.min(n);
    if input.toggles.san_lap_pert {
        let base = match input.spectral {
            Some(b) => Cow::Borrowed(b),
            None => Cow::Owned(SpectralBase::of(&input.adj.value())?),
        };
        let delta = laplacian_sym_var(input.adj) - tape.constant(base.laplacian.clone());
        let aligned = degenerate_alignment(&base.eig, &delta.value(), DEGENERACY_TOL);
        let op = PerturbationOperator::new(&aligned.values);
        Ok(perturb_top_k(&aligned, &op, delta, k))
    } else {
        let eig = eig_sym(&laplacian_sym(&input.adj.value()))?;
        let values = tape.constant(Tensor::vector(eig.values[..k].to_vec()));
        let vectors = tape.constant(eig.vectors).slice_cols(0, k);
        Ok((values, vectors))
    }
}

pub(super) fn forward<'t>(hyper: &Hyper, p: &Bound<'t>, input: &ForwardInput<'t, '_>) -> Result<Var<'t>, ModelError> {
    let tape = input.adj.tape();
    let (d, heads) = (hyper.hidden, hyper.heads);
    let dh = d / heads;
    let (values, mut vectors) = spectrum(hyper, input)?;
    if let Some(signs) = input.eig_signs {
        let k = vectors.value().dims2().1;
        let mut d = Tensor::zeros(&[k, k]);
        for (j, &s) in signs[..k].iter().enumerate() {
            d.set2(j, j, s);
        }
        vectors = vectors.matmul(tape.constant(d));
    }
    let lpe = san_lpe(hyper, p, values, vectors);
    let mut h = Var::concat_cols(&[linear(p, "input", tape.constant(input.features.clone())), lpe]);
    let probs = input.attention_probs();
    let scale = 1.0 / (dh as f64).sqrt();
    for l in 0..hyper.layers {
        let name = |s: &str| format!("layer{l}.{s}");
        let x = h.layer_norm();
        let proj = |s: &str| linear(p, &name(s), x);
        let (qr, kr, qf, kf, v) = (proj("q_real"), proj("k_real"), proj("q_fake"), proj("k_fake"), proj("v"));
        let mut outs = Vec::with_capacity(heads);
        for hd in 0..heads {
            let cols = |t: Var<'t>| t.slice_cols(hd * dh, (hd + 1) * dh);
            let w_real = cols(qr).matmul_t(cols(kr)).scale(scale);
            let w_fake = cols(qf).matmul_t(cols(kf)).scale(scale);
            let alpha = san_attention(w_real, w_fake, input.adj, probs, hyper.gamma, input.toggles.san_attention)?;
            outs.push(alpha.matmul(cols(v)));
        }
        h = ffn_block(p, &format!("layer{l}"), h + linear(p, &name("out"), Var::concat_cols(&outs)));
    }
    readout(hyper, p, h, input.node_probs)
}
