use grelax_autodiff::{finite_difference, Tape, Tensor, Var};
use grelax_core::graph::apply_flips_var;
use grelax_core::models::{Arch, ForwardInput, Hyper, Model, RelaxToggles, SpectralBase};
use grelax_core::Task;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const FEATURES: usize = 4;
const CLASSES: usize = 3;

fn model(arch: Arch, task: Task, seed: u64) -> Model {
    Model::new(Hyper::new(arch, task, FEATURES, CLASSES), seed).unwrap()
}

fn random_features(rng: &mut ChaCha8Rng, n: usize) -> Tensor {
    Tensor::matrix(n, FEATURES, (0..n * FEATURES).map(|_| rng.random_range(-1.0..1.0)).collect())
}

fn discrete_graph(rng: &mut ChaCha8Rng, n: usize, density: f64) -> Tensor {
    let mut a = Tensor::zeros(&[n, n]);
    for i in 0..n {
        for j in i + 1..n {
            if rng.random::<f64>() < density {
                a.set2(i, j, 1.0);
                a.set2(j, i, 1.0);
            }
        }
    }
    a
}

/// Connected discrete graph: a random spanning tree plus extra edges.
fn connected_graph(rng: &mut ChaCha8Rng, n: usize, density: f64) -> Tensor {
    let mut a = discrete_graph(rng, n, density);
    for v in 1..n {
        let u = rng.random_range(0..v);
        a.set2(u, v, 1.0);
        a.set2(v, u, 1.0);
    }
    a
}

fn upper_pairs(n: usize) -> Vec<(usize, usize)> {
    (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect()
}

fn relaxed_output(m: &Model, adj: &Tensor, x: &Tensor, base: Option<&SpectralBase>) -> Tensor {
    let tape = Tape::new();
    let bound = m.params.bind(&tape, false);
    let n = adj.dims2().0;
    let input = ForwardInput {
        adj: tape.constant(adj.clone()),
        features: x,
        node_probs: Some(tape.constant(Tensor::ones(&[n]))),
        toggles: RelaxToggles::all(),
        spectral: base,
        eig_signs: None,
    };
    m.forward(&bound, &input).unwrap().to_tensor()
}

#[test]
fn relaxed_equals_unrelaxed_on_discrete_graphs() {
    for task in [Task::Node, Task::Graph] {
        for arch in Arch::ALL {
            let m = model(arch, task, 7);
            let mut rng = ChaCha8Rng::seed_from_u64(11);
            let mut worst: f64 = 0.0;
            for _ in 0..50 {
                let n = rng.random_range(3..20);
                let density = rng.random_range(0.1..0.6);
                let adj = discrete_graph(&mut rng, n, density);
                let x = random_features(&mut rng, n);
                let exact = m.predict(&adj, &x).unwrap();
                let base = SpectralBase::of(&adj).unwrap();
                worst = worst.max(exact.max_abs_diff(&relaxed_output(&m, &adj, &x, Some(&base))));
                worst = worst.max(exact.max_abs_diff(&relaxed_output(&m, &adj, &x, None)));
            }
            assert!(worst <= 1e-8, "{arch} {task:?}: max logit difference {worst:e}");
        }
    }
}

#[test]
fn grit_toggles_leave_forward_values_unchanged() {
    let m = model(Arch::Grit, Task::Node, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let adj = discrete_graph(&mut rng, 9, 0.4);
    let x = random_features(&mut rng, 9);
    let run = |rrwp: bool, deg: bool| {
        let tape = Tape::new();
        let bound = m.params.bind(&tape, false);
        let mut toggles = RelaxToggles::all();
        toggles.grit_rrwp_grad = rrwp;
        toggles.grit_deg_grad = deg;
        let input = ForwardInput {
            adj: tape.constant(adj.clone()),
            features: &x,
            node_probs: None,
            toggles,
            spectral: None,
            eig_signs: None,
        };
        m.forward(&bound, &input).unwrap().to_tensor()
    };
    let reference = run(true, true);
    for (a, b) in [(false, true), (true, false), (false, false)] {
        assert_eq!(run(a, b), reference);
    }
}

/// Scalar attack-style objective of a model output.
fn objective<'t>(out: Var<'t>, task: Task, labels: &[usize]) -> Var<'t> {
    match task {
        Task::Node => out.margin_rows(labels).tanh().mean(),
        Task::Graph => out.sum(),
    }
}

fn loss_at(m: &Model, task: Task, x: &Tensor, labels: &[usize], base: &SpectralBase, values: &Tensor) -> f64 {
    let n = x.dims2().0;
    let tape = Tape::new();
    let bound = m.params.bind(&tape, false);
    let adj = apply_flips_var(&Tensor::zeros(&[n, n]), &upper_pairs(n), tape.constant(values.clone()));
    let input = ForwardInput {
        adj,
        features: x,
        node_probs: None,
        toggles: RelaxToggles::all(),
        spectral: Some(base),
        eig_signs: None,
    };
    objective(m.forward(&bound, &input).unwrap(), task, labels).item()
}

#[test]
fn adjacency_gradients_match_finite_differences() {
    let n = 7;
    let pairs = upper_pairs(n);
    for task in [Task::Node, Task::Graph] {
        for arch in Arch::ALL {
            let m = model(arch, task, 21);
            let mut rng = ChaCha8Rng::seed_from_u64(99);
            let mut worst: f64 = 0.0;
            for _ in 0..20 {
                let values = Tensor::vector((0..pairs.len()).map(|_| rng.random_range(0.1..0.9)).collect());
                let x = random_features(&mut rng, n);
                let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..CLASSES)).collect();
                let adj_value = {
                    let t = Tape::new();
                    apply_flips_var(&Tensor::zeros(&[n, n]), &pairs, t.constant(values.clone())).to_tensor()
                };
                let base = SpectralBase::of(&adj_value).unwrap();

                let tape = Tape::new();
                let bound = m.params.bind(&tape, false);
                let leaf = tape.leaf(values.clone());
                let adj = apply_flips_var(&Tensor::zeros(&[n, n]), &pairs, leaf);
                let input = ForwardInput {
                    adj,
                    features: &x,
                    node_probs: None,
                    toggles: RelaxToggles::all(),
                    spectral: Some(&base),
                    eig_signs: None,
                };
                let loss = objective(m.forward(&bound, &input).unwrap(), task, &labels);
                let got = tape.backward(loss).unwrap().get(leaf);
                let want = finite_difference(|v| loss_at(&m, task, &x, &labels, &base, v), &values, 1e-5);
                let rel = got.max_abs_diff(&want) / want.max_abs().max(1e-3);
                worst = worst.max(rel);
            }
            assert!(worst <= 1e-3, "{arch} {task:?}: relative gradient error {worst:e}");
        }
    }
}

#[test]
fn logits_are_continuous_along_an_edge_insertion() {
    for arch in Arch::ALL {
        let m = model(arch, Task::Node, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..3 {
            let n = 10;
            let adj = connected_graph(&mut rng, n, 0.2);
            let x = random_features(&mut rng, n);
            let (i, j) = loop {
                let (i, j) = (rng.random_range(0..n), rng.random_range(0..n));
                if i != j && adj.get2(i, j) == 0.0 {
                    break (i, j);
                }
            };
            let base = SpectralBase::of(&adj).unwrap();
            let at = |t: f64| {
                let mut a = adj.clone();
                a.set2(i, j, t);
                a.set2(j, i, t);
                relaxed_output(&m, &a, &x, Some(&base))
            };
            let mut prev = at(0.0);
            let (mut total, mut biggest): (f64, f64) = (0.0, 0.0);
            for step in 1..=1000 {
                let cur = at(step as f64 * 1e-3);
                let jump = cur.max_abs_diff(&prev);
                total += jump;
                biggest = biggest.max(jump);
                prev = cur;
            }
            assert!(
                biggest <= 1e-2 * total + 1e-12,
                "{arch}: one 1e-3 step moved logits by {biggest:e} of total variation {total:e}"
            );
        }
    }
}

fn permute(adj: &Tensor, x: &Tensor, perm: &[usize]) -> (Tensor, Tensor) {
    let n = perm.len();
    let mut a = Tensor::zeros(&[n, n]);
    let mut y = Tensor::zeros(&[n, x.dims2().1]);
    for i in 0..n {
        for j in 0..n {
            a.set2(perm[i], perm[j], adj.get2(i, j));
        }
        for c in 0..x.dims2().1 {
            y.set2(perm[i], c, x.get2(i, c));
        }
    }
    (a, y)
}

#[test]
fn node_logits_are_permutation_equivariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    for arch in Arch::ALL {
        let m = model(arch, Task::Node, 8);
        let g = model(arch, Task::Graph, 8);
        for trial in 0..5 {
            let n = 9;
            let adj = if trial % 2 == 0 {
                connected_graph(&mut rng, n, 0.3)
            } else {
                // continuous weights keep the spectrum and the paths free of ties
                let a = connected_graph(&mut rng, n, 0.3);
                let w: Vec<f64> = (0..n * n).map(|_| rng.random_range(0.2..1.0)).collect();
                Tensor::matrix(n, n, a.data().iter().zip(&w).map(|(a, w)| a * w).collect())
            };
            let adj = adj.zip_map(&adj.transpose(), f64::max);
            if arch == Arch::San && trial % 2 == 0 {
                continue;
            }
            let x = random_features(&mut rng, n);
            let mut perm: Vec<usize> = (0..n).collect();
            for k in (1..n).rev() {
                perm.swap(k, rng.random_range(0..=k));
            }
            let (pa, px) = permute(&adj, &x, &perm);
            let out = relaxed_output(&m, &adj, &x, None);
            let pout = relaxed_output(&m, &pa, &px, None);
            for i in 0..n {
                for c in 0..CLASSES {
                    assert!((out.get2(i, c) - pout.get2(perm[i], c)).abs() < 1e-9, "{arch}");
                }
            }
            let s = relaxed_output(&g, &adj, &x, None).item();
            let ps = relaxed_output(&g, &pa, &px, None).item();
            assert!((s - ps).abs() < 1e-9, "{arch}: graph score {s} vs {ps}");
        }
    }
}

#[test]
fn zero_features_give_equal_logits_for_equal_degrees() {
    let m = model(Arch::Gcn, Task::Node, 2);
    // 6-cycle: every node has degree 2
    let n = 6;
    let mut adj = Tensor::zeros(&[n, n]);
    for i in 0..n {
        adj.set2(i, (i + 1) % n, 1.0);
        adj.set2((i + 1) % n, i, 1.0);
    }
    let out = m.predict(&adj, &Tensor::zeros(&[n, FEATURES])).unwrap();
    for i in 1..n {
        assert!(out.row(i).iter().zip(out.row(0)).all(|(a, b)| (a - b).abs() < 1e-14));
    }
}

#[test]
fn graphormer_isolated_components_use_unreachable_bias() {
    let mut m = model(Arch::Graphormer, Task::Node, 6);
    // two disjoint edges
    let mut adj = Tensor::zeros(&[4, 4]);
    for (i, j) in [(0, 1), (2, 3)] {
        adj.set2(i, j, 1.0);
        adj.set2(j, i, 1.0);
    }
    let x = random_features(&mut ChaCha8Rng::seed_from_u64(3), 4);
    let before = m.predict(&adj, &x).unwrap();
    let unreachable = m.hyper.max_distance + 1;
    let spd = m.params.get_mut("spd").unwrap();
    for h in 0..spd.dims2().1 {
        spd.set2(unreachable, h, spd.get2(unreachable, h) + 3.0);
    }
    let after = m.predict(&adj, &x).unwrap();
    assert!(before.max_abs_diff(&after) > 1e-6);

    // a connected graph never reads the unreachable row
    let path = connected_graph(&mut ChaCha8Rng::seed_from_u64(1), 4, 0.0);
    let mut m2 = model(Arch::Graphormer, Task::Node, 6);
    let before = m2.predict(&path, &x).unwrap();
    let spd = m2.params.get_mut("spd").unwrap();
    for h in 0..spd.dims2().1 {
        spd.set2(unreachable, h, 100.0);
    }
    assert_eq!(before, m2.predict(&path, &x).unwrap());
}

#[test]
fn graphormer_virtual_node_ignores_structure_for_readout_access() {
    // the graph score changes with node features even on an empty graph
    let m = model(Arch::Graphormer, Task::Graph, 12);
    let adj = Tensor::zeros(&[5, 5]);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let a = m.predict(&adj, &random_features(&mut rng, 5)).unwrap().item();
    let b = m.predict(&adj, &random_features(&mut rng, 5)).unwrap().item();
    assert!((a - b).abs() > 1e-9);
}

#[test]
fn checkpoint_round_trip_is_exact() {
    let dir = std::env::temp_dir().join(format!("grelax-ckpt-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    for arch in Arch::ALL {
        let m = model(arch, Task::Graph, 31);
        let path = dir.join(format!("{arch}.json"));
        m.save(&path).unwrap();
        let back = Model::load(&path).unwrap();
        assert_eq!(back, m);
        let text = std::fs::read_to_string(&path).unwrap();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["arch"], arch.name());
        assert!(v["params"]["head.w"]["shape"].is_array());
    }
    let bad = dir.join("bad.json");
    std::fs::write(&bad, "{\"arch\": \"gcn\"").unwrap();
    assert!(Model::load(&bad).is_err());
    std::fs::remove_dir_all(&dir).unwrap();
}
