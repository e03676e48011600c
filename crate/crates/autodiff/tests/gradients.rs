use std::rc::Rc;

use grelax_autodiff::{finite_difference, interp_slots, PathTable, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const POINTS: usize = 100;
const EPS: f64 = 1e-5;
const TOL: f64 = 1e-4;

fn random(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let len = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..len).map(|_| rng.random_range(lo..hi)).collect())
}

/// Values bounded away from zero, either sign.
fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    random(rng, shape, 0.05, 2.0).zip_map(
        &random(rng, shape, -1.0, 1.0),
        |x, s| if s < 0.0 { -x } else { x },
    )
}

fn rel_err(got: &Tensor, want: &Tensor) -> f64 {
    got.max_abs_diff(want) / want.max_abs().max(1e-3)
}

/// Compares the tape gradient of `f` w.r.t. its input with central differences.
/// `f` maps the input to any tensor; it is reduced with fixed random weights.
fn check<F>(name: &str, f: F, x: &Tensor, seed: u64)
where
    F: for<'t> Fn(Var<'t>) -> Var<'t>,
{
    let out_shape = {
        let tape = Tape::new();
        f(tape.constant(x.clone())).shape()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let w = random(&mut rng, &out_shape, -1.0, 1.0);
    let loss = |t: &Tensor| {
        let tape = Tape::new();
        let y = f(tape.constant(t.clone()));
        (y * tape.constant(w.clone())).sum().item()
    };
    let tape = Tape::new();
    let leaf = tape.leaf(x.clone());
    let y = f(leaf);
    let l = (y * tape.constant(w.clone())).sum();
    let got = tape.backward(l).unwrap().get(leaf);
    let want = finite_difference(loss, x, EPS);
    let e = rel_err(&got, &want);
    assert!(e <= TOL, "{name}: relative error {e:.3e}\n got {got:?}\nwant {want:?}");
}

fn sweep<F>(name: &str, shape: &[usize], gen: impl Fn(&mut ChaCha8Rng, &[usize]) -> Tensor, f: F)
where
    F: for<'t> Fn(Var<'t>) -> Var<'t> + Copy,
{
    let mut rng = ChaCha8Rng::seed_from_u64(name.len() as u64 * 7919);
    for k in 0..POINTS {
        let x = gen(&mut rng, shape);
        check(name, f, &x, k as u64);
    }
}

fn normal(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    random(rng, shape, -2.0, 2.0)
}

fn positive(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    random(rng, shape, 0.1, 2.0)
}

fn unit(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    random(rng, shape, 0.05, 0.95)
}

fn fixed(seed: u64, shape: &[usize]) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    normal(&mut rng, shape)
}

#[test]
fn elementwise_unary() {
    sweep("exp", &[3, 2], normal, |x| x.exp());
    sweep("log", &[3, 2], positive, |x| x.log());
    sweep("tanh", &[3, 2], normal, |x| x.tanh());
    sweep("sigmoid", &[3, 2], normal, |x| x.sigmoid());
    sweep("relu", &[3, 2], away_from_zero, |x| x.relu());
    sweep("gelu", &[3, 2], normal, |x| x.gelu());
    sweep("safe_recip", &[3, 2], positive, |x| x.safe_recip());
    sweep("safe_rsqrt", &[3, 2], positive, |x| x.safe_rsqrt());
    sweep("scale", &[4], normal, |x| x.scale(-1.7));
    sweep("add_scalar", &[4], normal, |x| x.add_scalar(0.3).exp());
    sweep("rsub_scalar", &[4], normal, |x| x.rsub_scalar(1.0).tanh());
    sweep("neg", &[4], normal, |x| -x.exp());
}

#[test]
fn elementwise_binary() {
    sweep("add", &[2, 3], normal, |x| (x + x.tanh()).exp());
    sweep("sub", &[2, 3], normal, |x| x.exp() - x.tanh());
    sweep("mul", &[2, 3], normal, |x| x * x.sigmoid());
    sweep("div", &[2, 3], positive, |x| x.tanh() / x);
    sweep("div_numerator", &[2, 3], normal, |x| {
        let d = x.tape().constant(Tensor::full(&[2, 3], 1.5));
        x / d
    });
}

#[test]
fn products() {
    sweep("matmul_left", &[3, 4], normal, |x| {
        x.matmul(x.tape().constant(fixed(1, &[4, 2])))
    });
    sweep("matmul_right", &[4, 2], normal, |x| {
        x.tape().constant(fixed(2, &[3, 4])).matmul(x)
    });
    sweep("matmul_self", &[3, 3], normal, |x| x.matmul(x));
    sweep("matmul_t", &[3, 4], normal, |x| x.matmul_t(x.tanh()));
    sweep("t_matmul", &[3, 4], normal, |x| x.t_matmul(x.sigmoid()));
    sweep("transpose", &[2, 3], normal, |x| x.transpose().exp());
    sweep("bmm", &[2, 3, 2], normal, |x| {
        x.bmm(x.tape().constant(fixed(3, &[2, 2, 4])))
    });
    sweep("bmm_self", &[2, 3, 3], normal, |x| x.bmm(x.tanh()));
    sweep("bmm_t", &[2, 3, 2], normal, |x| x.bmm_t(x.sigmoid()));
}

#[test]
fn broadcasts() {
    sweep("add_row", &[3, 2], normal, |x| x.add_row(x.sum_cols()).exp());
    sweep("add_row_rhs", &[2], normal, |x| {
        x.tape().constant(fixed(4, &[3, 2])).add_row(x).tanh()
    });
    sweep("mul_row", &[3, 2], normal, |x| x.mul_row(x.sum_cols().tanh()));
    sweep("mul_col", &[3, 2], normal, |x| x.mul_col(x.sum_rows().sigmoid()));
}

#[test]
fn softmaxes() {
    sweep("softmax_rows", &[3, 4], normal, |x| x.softmax_rows());
    sweep("weighted_softmax_w", &[3, 4], normal, |x| {
        let q = x.tape().constant(Tensor::matrix(
            3,
            4,
            vec![1., 0.5, 0., 0.2, 1., 1., 1., 1., 0., 0., 0.3, 0.],
        ));
        x.weighted_softmax_rows(q)
    });
    sweep("weighted_softmax_q", &[3, 4], unit, |q| {
        q.tape().constant(fixed(5, &[3, 4])).weighted_softmax_rows(q)
    });
}

#[test]
fn weighted_softmax_gradient_at_zero_weight() {
    // d/dq_j at q_j = 0 exists and equals e^{w_j}/Σ q_k e^{w_k}
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for k in 0..POINTS {
        let mut q = unit(&mut rng, &[2, 3]);
        q.data_mut()[1] = 0.0;
        q.data_mut()[5] = 0.0;
        check("weighted_softmax_zero_q", |q| {
            q.tape().constant(fixed(6, &[2, 3])).weighted_softmax_rows(q)
        }, &q, k as u64);
    }
}

#[test]
fn reductions_and_shapes() {
    sweep("sum", &[3, 2], normal, |x| x.exp().sum());
    sweep("mean", &[3, 2], normal, |x| x.exp().mean());
    sweep("sum_rows", &[3, 2], normal, |x| x.exp().sum_rows());
    sweep("sum_cols", &[3, 2], normal, |x| x.exp().sum_cols());
    sweep("concat_cols", &[3, 2], normal, |x| {
        Var::concat_cols(&[x, x.exp(), x.slice_cols(1, 2)])
    });
    sweep("concat_rows", &[2, 3], normal, |x| Var::concat_rows(&[x.tanh(), x]));
    sweep("slice_cols", &[3, 4], normal, |x| x.slice_cols(1, 3).exp());
    sweep("gather_rows", &[3, 2], normal, |x| x.gather_rows(&[2, 0, 2, 1]).exp());
    sweep("reshape", &[2, 3], normal, |x| x.reshape(&[3, 2]).softmax_rows());
    sweep("pad2d", &[2, 2], normal, |x| x.pad2d(3, 4).softmax_rows());
    sweep("masked_fill", &[2, 3], normal, |x| {
        x.masked_fill(&[true, false, false, false, true, false], 0.25).exp()
    });
    sweep("diag", &[3, 3], normal, |x| x.diag().exp());
    sweep("layer_norm", &[3, 4], normal, |x| x.layer_norm());
}

#[test]
fn graph_primitives() {
    sweep("scatter_sym", &[3], normal, |x| {
        x.scatter_sym(&[(0, 1), (2, 1), (0, 3)], 4).matmul(x.tape().constant(fixed(7, &[4, 2])))
    });
    sweep("pair_sum", &[3, 2], normal, |x| x.pair_sum(x.tanh()).exp());
    sweep("pair_weighted_sum_alpha", &[2, 3], normal, |a| {
        a.pair_weighted_sum(a.tape().constant(fixed(8, &[6, 2])))
    });
    sweep("pair_weighted_sum_edges", &[6, 2], normal, |e| {
        e.tape().constant(fixed(9, &[2, 3])).pair_weighted_sum(e)
    });
    let paths = Rc::new(PathTable {
        rows: 3,
        cols: 3,
        offsets: vec![0, 0, 1, 3, 4, 4, 5, 7, 8, 8],
        edges: vec![(0, 1), (0, 1), (1, 2), (1, 0), (1, 2), (2, 1), (1, 0), (2, 1)],
    });
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for k in 0..POINTS {
        let x = unit(&mut rng, &[3, 3]);
        let p = paths.clone();
        check("path_sums", move |a| a.path_sums(p.clone()), &x, k as u64);
    }
    sweep("noisy_or_adj", &[3, 3], unit, |a| {
        a.noisy_or(a.tape().constant(Tensor::vector(vec![1.0, 0.4, 0.7])))
    });
    sweep("noisy_or_p", &[3], unit, |p| {
        let a = p.tape().constant(Tensor::matrix(3, 3, vec![0., 0.5, 0.9, 0.5, 0., 0.3, 0.9, 0.3, 0.]));
        a.noisy_or(a.noisy_or(p))
    });
}

#[test]
fn interpolation_rows() {
    sweep("interp_table", &[6, 2], normal, |t| {
        t.interp_rows(None, interp_slots(&[0.3, 2.75, 1.5, 4.0, f64::INFINITY, 0.0], 4, Some(5)))
    });
    let table = fixed(10, &[6, 2]);
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for k in 0..POINTS {
        // keep positions off integers so the slot stays fixed under perturbation
        let x = random(&mut rng, &[4], 0.05, 0.95).zip_map(
            &Tensor::vector(vec![0.0, 1.0, 2.0, 3.0]),
            |f, i| f + i,
        );
        let table = table.clone();
        check(
            "interp_pos",
            move |p| {
                let slots = interp_slots(p.value().data(), 4, Some(5));
                p.tape().constant(table.clone()).interp_rows(Some(p), slots)
            },
            &x,
            k as u64,
        );
    }
}

#[test]
fn losses() {
    sweep("cross_entropy", &[4, 3], normal, |z| z.cross_entropy(&[0, 2, 1, 2], &[1.0, 0.0, 0.5, 1.0]));
    sweep("bce_logits", &[5], normal, |s| s.bce_logits(&[1.0, 0.0, 0.0, 1.0, 1.0]));
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for k in 0..POINTS {
        // ensure a unique rival per row so the margin is locally smooth
        let mut z = normal(&mut rng, &[3, 4]);
        for i in 0..3 {
            z.data_mut()[i * 4 + 3] = 3.0 + i as f64;
        }
        check("margin_rows", |z| z.margin_rows(&[0, 1, 2]).tanh(), &z, k as u64);
    }
}
