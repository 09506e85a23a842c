mod common;

use gclprior::encoder::stage;
use gclprior::generator::{
    decode_block, decode_edge_probs, gen_loss, gen_loss_value, positive_weight, reparameterize, sample_view,
    Generator, GeneratorConfig, LatentPosterior, PROB_CLAMP,
};
use gclprior::graph::{make_batch, synth_two_community, Graph, SynthConfig};
use gclprior::rng::{stream, Stream};
use gclprior::tape::Tape;
use gclprior::tensor::Tensor;
use gclprior::trainer::train_generator;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn cfg(input: usize, hidden: usize, layers: usize, latent: usize) -> GeneratorConfig {
    GeneratorConfig {
        input_dim: input,
        hidden,
        layers,
        latent_dim: latent,
    }
}

// plain nested-loop linear algebra for the manual oracle
fn mm(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let (n, k, m) = (a.len(), b.len(), b[0].len());
    let mut out = vec![vec![0.0; m]; n];
    for i in 0..n {
        for j in 0..m {
            for t in 0..k {
                out[i][j] += a[i][t] * b[t][j];
            }
        }
    }
    out
}

fn affine(x: &[Vec<f64>], w: &Tensor, b: &Tensor, relu: bool) -> Vec<Vec<f64>> {
    let wr: Vec<Vec<f64>> = (0..w.rows()).map(|i| w.row(i).to_vec()).collect();
    let mut y = mm(x, &wr);
    for row in &mut y {
        for (j, v) in row.iter_mut().enumerate() {
            *v += b.get(0, j);
            if relu {
                *v = v.max(0.0);
            }
        }
    }
    y
}

#[test]
fn four_node_posterior_matches_hand_forward() {
    let x = vec![vec![1.0, -0.5], vec![0.25, 2.0], vec![-1.0, 0.0], vec![0.5, 0.5]];
    let edges = vec![(0, 1), (1, 2), (1, 3)];
    let g = Graph::new(4, edges.clone(), Tensor::from_rows(&x).unwrap(), None).unwrap();
    let mut gen = Generator::init(cfg(2, 3, 2, 2), &mut stream(0, Stream::Init)).unwrap();
    common::randomize(&mut gen.params, &mut ChaCha8Rng::seed_from_u64(21), 1.0);
    let p = |name: &str| gen.params.value(name).unwrap().clone();

    // (A + I) with ε = 0
    let mut agg = vec![vec![0.0; 4]; 4];
    for (i, row) in agg.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    for &(a, b) in &edges {
        agg[a][b] = 1.0;
        agg[b][a] = 1.0;
    }
    let mut h = x.clone();
    for l in 0..2 {
        let m = mm(&agg, &h);
        let a = affine(&m, &p(&format!("trunk.{l}.lin1.w")), &p(&format!("trunk.{l}.lin1.b")), true);
        h = affine(&a, &p(&format!("trunk.{l}.lin2.w")), &p(&format!("trunk.{l}.lin2.b")), true);
    }
    let mu = affine(&h, &p("mu.w"), &p("mu.b"), false);
    let lv = affine(&h, &p("logvar.w"), &p("logvar.b"), false);

    let post = gen.vgae_encode(&make_batch(&[g]).unwrap()).unwrap();
    for i in 0..4 {
        for j in 0..2 {
            assert!((post.mu.get(i, j) - mu[i][j]).abs() <= 1e-9);
            assert!((post.logvar.get(i, j) - lv[i][j].clamp(-10.0, 10.0)).abs() <= 1e-9);
        }
    }
}

#[test]
fn permuted_nodes_permute_posterior_rows() {
    let data = synth_two_community(
        &SynthConfig {
            n_graphs: 1,
            n_nodes: 10,
            ..SynthConfig::default()
        },
        2,
    )
    .unwrap();
    let g = &data.graphs()[0];
    let gen = Generator::init(cfg(8, 8, 3, 4), &mut stream(3, Stream::Init)).unwrap();
    let mut perm: Vec<usize> = (0..10).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(1));
    let a = gen.vgae_encode(&make_batch(std::slice::from_ref(g)).unwrap()).unwrap();
    let b = gen.vgae_encode(&make_batch(&[g.permuted(&perm).unwrap()]).unwrap()).unwrap();
    for i in 0..10 {
        for (u, v) in a.mu.row(i).iter().zip(b.mu.row(perm[i])) {
            assert!((u - v).abs() <= 1e-9);
        }
        for (u, v) in a.logvar.row(i).iter().zip(b.logvar.row(perm[i])) {
            assert!((u - v).abs() <= 1e-9);
        }
    }
}

#[test]
fn zero_generator_has_standard_posterior() {
    let g = Graph::new(3, vec![(0, 1)], Tensor::ones(3, 2), None).unwrap();
    let post = Generator::zeroed(cfg(2, 4, 2, 3))
        .unwrap()
        .vgae_encode(&make_batch(&[g]).unwrap())
        .unwrap();
    assert!(post.mu.data().iter().chain(post.logvar.data()).all(|&v| v == 0.0));
}

#[test]
fn sample_mean_of_unit_posterior() {
    let post = LatentPosterior {
        mu: Tensor::ones(1000, 100),
        logvar: Tensor::zeros(1000, 100),
    };
    let z = reparameterize(&post, &mut stream(8, Stream::Reparam)).unwrap();
    let mean = z.sum() / z.len() as f64;
    assert!((mean - 1.0).abs() <= 0.01, "mean {mean}");
}

#[test]
fn reparameterized_gradients_reach_mu_and_logvar() {
    let eps = Tensor::row_vector(&[0.7, -1.3]).unwrap();
    let mut t = Tape::new();
    let mu = t.param(Tensor::row_vector(&[0.2, 0.1]).unwrap());
    let lv = t.param(Tensor::row_vector(&[0.4, -0.6]).unwrap());
    let z = gclprior::generator::reparameterize_on(&mut t, mu, lv, eps.clone()).unwrap();
    let s = t.sum(z).unwrap();
    let g = t.backward(s).unwrap();
    assert_eq!(g.get(mu).unwrap().data(), &[1.0, 1.0]);
    // ∂z/∂logvar = ½ exp(logvar/2) ε
    let glv = g.get(lv).unwrap();
    assert!((glv.get(0, 0) - 0.5 * (0.2f64).exp() * 0.7).abs() < 1e-12);
    assert!((glv.get(0, 1) - 0.5 * (-0.3f64).exp() * -1.3).abs() < 1e-12);
}

#[test]
fn decoder_closed_forms() {
    let z = Tensor::from_rows(&[[1.0, 0.0], [0.0, 2.0], [3.0, 1.0], [3.0, 1.0]]).unwrap();
    let p = decode_edge_probs(&z, &[0, 0, 0, 0]).unwrap();
    assert_eq!(p.get(0, 1), 0.5);
    // |z|² = 10
    assert!((p.get(2, 3) - 1.0 / (1.0 + (-10.0f64).exp())).abs() < 1e-15);
    assert!((p.get(2, 3) - 0.99995).abs() < 1e-5);
    let q = decode_edge_probs(&z, &[0, 0, 1, 1]).unwrap();
    assert_eq!(q.get(0, 2), 0.0);
}

#[test]
fn unit_probability_clique_is_recovered() {
    let g = Graph::new(4, vec![], Tensor::from_fn(4, 1, |i, _| i as f64), Some(0)).unwrap();
    let p = Tensor::from_fn(4, 4, |i, j| if i == j { 0.0 } else { 1.0 });
    let v = sample_view(&g, &p, 4, 40, &mut stream(0, Stream::Walks)).unwrap();
    assert_eq!(v.graph.n(), 4);
    assert_eq!(v.graph.num_edges(), 6);
    assert_eq!(v.graph.x(), g.x());
    assert_eq!(v.halted_walks, 0);
}

#[test]
fn zero_probabilities_halt_every_walk() {
    let g = Graph::new(6, vec![(0, 1)], Tensor::ones(6, 1), None).unwrap();
    let v = sample_view(&g, &Tensor::zeros(6, 6), 6, 2, &mut stream(0, Stream::Walks)).unwrap();
    assert!((1..=2).contains(&v.graph.n()));
    assert_eq!(v.graph.num_edges(), 0);
    assert_eq!(v.halted_walks, 2);
}

#[test]
fn cross_block_edges_are_rare() {
    let n = 8;
    // node i carries feature i, so view edges map back to original ids
    let tagged = Graph::new(n, vec![], Tensor::from_fn(n, 1, |i, _| i as f64), None).unwrap();
    let block = |i: usize| i < n / 2;
    let p = Tensor::from_fn(n, n, |i, j| match (i == j, block(i) == block(j)) {
        (true, _) => 0.0,
        (false, true) => 0.9,
        (false, false) => 0.01,
    });
    let mut rng = stream(1, Stream::Walks);
    let (mut cross, mut total) = (0usize, 0usize);
    for _ in 0..10_000 {
        let v = sample_view(&tagged, &p, n, 2, &mut rng).unwrap().graph;
        for &(a, b) in v.edges() {
            let (oa, ob) = (v.x().get(a, 0) as usize, v.x().get(b, 0) as usize);
            total += 1;
            if block(oa) != block(ob) {
                cross += 1;
            }
        }
    }
    let frac = cross as f64 / total as f64;
    assert!(frac < 0.05, "cross-block fraction {frac}");
}

#[test]
fn gen_loss_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for case in 0..20 {
        let n = 2 + case % 6;
        let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| ((i + 1)..n).map(move |j| (i, j))).collect();
        let edges: Vec<(usize, usize)> = pairs.into_iter().filter(|_| rand::Rng::random_bool(&mut rng, 0.4)).collect();
        let g = Graph::new(n, edges, Tensor::ones(n, 1), None).unwrap();
        let mut p = common::uniform(&mut rng, n, n, 0.0, 1.0);
        p.set(0, n - 1, 0.0);
        p.set(n - 1, 0, 1.0);
        let post = LatentPosterior {
            mu: common::uniform(&mut rng, n, 3, -1.0, 1.0),
            logvar: common::uniform(&mut rng, n, 3, -1.0, 1.0),
        };
        let (total, bce, kl) = gen_loss_value(&g, &p, &post).unwrap();

        let m = g.num_edges();
        let w = if m == 0 { 1.0 } else { ((n * n - n) as f64 - 2.0 * m as f64) / (2.0 * m as f64) };
        let mut want_bce = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let q = p.get(i, j).clamp(1e-7, 1.0 - 1e-7);
                want_bce -= if g.has_edge(i, j) { w * q.ln() } else { (1.0 - q).ln() };
            }
        }
        let mut want_kl = 0.0;
        for i in 0..n {
            for d in 0..3 {
                let (m, lv) = (post.mu.get(i, d), post.logvar.get(i, d));
                want_kl += 0.5 * (m * m + lv.exp() - lv - 1.0);
            }
        }
        want_kl /= n as f64;
        assert!((bce - want_bce).abs() <= 1e-9 * want_bce.abs().max(1.0), "case {case}");
        assert!((kl - want_kl).abs() <= 1e-9);
        assert!((total - want_bce - want_kl).abs() <= 1e-9 * total.abs().max(1.0));
    }
}

#[test]
fn perfect_reconstruction_and_kl_closed_form() {
    let g = Graph::new(4, vec![(0, 1), (2, 3)], Tensor::ones(4, 1), None).unwrap();
    let p = g.adjacency();
    let std = LatentPosterior {
        mu: Tensor::zeros(4, 2),
        logvar: Tensor::zeros(4, 2),
    };
    let (_, bce, kl) = gen_loss_value(&g, &p, &std).unwrap();
    assert_eq!(kl, 0.0);
    assert!(bce <= 16.0 * -(1.0 - PROB_CLAMP).ln() * positive_weight(4, 2));
    let single = Graph::new(1, vec![], Tensor::ones(1, 1), None).unwrap();
    let one = LatentPosterior {
        mu: Tensor::ones(1, 1),
        logvar: Tensor::zeros(1, 1),
    };
    let (_, _, kl) = gen_loss_value(&single, &Tensor::zeros(1, 1), &one).unwrap();
    assert!((kl - 0.5).abs() < 1e-15);
}

#[test]
fn edgeless_graph_uses_unit_weight() {
    assert_eq!(positive_weight(5, 0), 1.0);
    assert_eq!(positive_weight(4, 2), 2.0);
    let g = Graph::new(3, vec![], Tensor::ones(3, 1), None).unwrap();
    let mut t = Tape::new();
    let p = t.constant(Tensor::full(3, 3, 0.5));
    let mu = t.constant(Tensor::zeros(3, 1));
    let lv = t.constant(Tensor::zeros(3, 1));
    assert!(gen_loss(&mut t, &g, p, mu, lv).unwrap().no_edges);
}

#[test]
fn gen_loss_gradient_on_five_nodes() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let x = common::uniform(&mut rng, 5, 3, -1.0, 1.0);
    let g = Graph::new(5, vec![(0, 1), (1, 2), (2, 3), (3, 4), (1, 4)], x, None).unwrap();
    let batch = make_batch(std::slice::from_ref(&g)).unwrap();
    let mut gen = Generator::init(cfg(3, 5, 2, 3), &mut rng).unwrap();
    common::randomize(&mut gen.params, &mut rng, 0.5);
    let eps = common::uniform(&mut rng, 5, 3, -1.0, 1.0);
    let err = common::param_grad_error(&gen.params, |t, b| {
        let s = stage(t, &batch);
        let (mu, lv) = gen.encode(t, b, &s)?;
        let z = gclprior::generator::reparameterize_on(t, mu, lv, eps.clone())?;
        let p = decode_block(t, z)?;
        Ok(gen_loss(t, &g, p, mu, lv)?.total)
    });
    assert!(err <= 1e-4, "worst relative error {err:.3e}");
}

#[test]
fn generator_alone_decreases_over_fifty_epochs() {
    let data = synth_two_community(&SynthConfig::default(), 7).unwrap();
    let graphs = &data.graphs()[..16];
    let mut gen = Generator::init(cfg(8, 32, 3, 16), &mut stream(0, Stream::Init)).unwrap();
    let losses = train_generator(&mut gen, graphs, 50, 1e-3, 0).unwrap();
    assert!(losses[49] < losses[0]);
    // windowed means fall monotonically (single epochs carry reparameterization noise)
    let windows: Vec<f64> = losses.chunks(10).map(|w| w.iter().sum::<f64>() / w.len() as f64).collect();
    for w in windows.windows(2) {
        assert!(w[1] < w[0], "{windows:?}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn kl_is_nonnegative(mu in proptest::collection::vec(-3.0f64..3.0, 6), lv in proptest::collection::vec(-10.0f64..10.0, 6)) {
        let g = Graph::new(3, vec![], Tensor::ones(3, 1), None).unwrap();
        let post = LatentPosterior { mu: Tensor::new(3, 2, mu.clone()).unwrap(), logvar: Tensor::new(3, 2, lv.clone()).unwrap() };
        let (_, _, kl) = gen_loss_value(&g, &Tensor::zeros(3, 3), &post).unwrap();
        prop_assert!(kl >= 0.0);
        if mu.iter().chain(&lv).any(|v| v.abs() > 1e-3) {
            prop_assert!(kl > 0.0);
        }
    }

    #[test]
    fn decoded_matrix_is_symmetric_and_blocked(sizes in proptest::collection::vec(1usize..6, 1..4), seed in any::<u64>()) {
        let n: usize = sizes.iter().sum();
        let z = common::uniform(&mut ChaCha8Rng::seed_from_u64(seed), n, 3, -2.0, 2.0);
        let gid: Vec<usize> = sizes.iter().enumerate().flat_map(|(g, &s)| std::iter::repeat_n(g, s)).collect();
        let p = decode_edge_probs(&z, &gid).unwrap();
        for i in 0..n {
            prop_assert_eq!(p.get(i, i), 0.0);
            for j in 0..n {
                prop_assert_eq!(p.get(i, j), p.get(j, i));
                if gid[i] != gid[j] {
                    prop_assert_eq!(p.get(i, j), 0.0);
                } else if i != j {
                    prop_assert!(p.get(i, j) > 0.0 && p.get(i, j) < 1.0);
                }
            }
        }
    }

    #[test]
    fn sampled_views_are_valid(n in 1usize..10, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = common::uniform(&mut rng, n, 2, -1.0, 1.0);
        let g = Graph::new(n, vec![], x, Some(1)).unwrap();
        let mut p = common::uniform(&mut rng, n, n, 0.0, 1.0);
        for i in 0..n { p.set(i, i, 0.0); }
        let v = sample_view(&g, &p, n, n.div_ceil(4), &mut rng).unwrap().graph;
        prop_assert!(v.n() >= 1);
        prop_assert_eq!(v.label(), Some(1));
        // every view row is a copy of some anchor row
        for i in 0..v.n() {
            prop_assert!((0..n).any(|k| g.x().row(k) == v.x().row(i)));
        }
    }
}
