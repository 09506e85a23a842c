mod common;

use gclprior::encoder::{readout, stage, Encoder, EncoderConfig};
use gclprior::graph::{make_batch, Graph};
use gclprior::rng::{stream, Stream};
use gclprior::tape::Tape;
use gclprior::tensor::Tensor;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn five_node() -> Graph {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = common::uniform(&mut rng, 5, 3, -1.0, 1.0);
    Graph::new(5, vec![(0, 1), (1, 2), (2, 3), (3, 4), (0, 2)], x, None).unwrap()
}

#[test]
fn composite_gradient_on_five_nodes() {
    let g = five_node();
    let batch = make_batch(std::slice::from_ref(&g)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut enc = Encoder::init(EncoderConfig::new(3, 6, 3), &mut rng).unwrap();
    // nonzero biases keep pre-activations away from relu kinks
    common::randomize(&mut enc.params, &mut rng, 0.6);
    let w = common::uniform(&mut rng, 1, 6, -1.0, 1.0);
    let err = common::param_grad_error(&enc.params, |t, b| {
        let s = stage(t, &batch);
        let (_, z) = enc.forward(t, b, &s)?;
        let wv = t.constant(w.clone());
        let m = t.mul(z, wv)?;
        t.sum(m)
    });
    assert!(err <= 1e-4, "worst relative error {err:.3e}");
}

#[test]
fn readout_sums_by_brute_force() {
    let x = Tensor::from_fn(5, 3, |i, j| (i * 3 + j) as f64 * 0.5 - 2.0);
    let ga = Graph::new(2, vec![(0, 1)], x.gather_rows(&[0, 1]).unwrap(), None).unwrap();
    let gb = Graph::new(3, vec![(0, 2)], x.gather_rows(&[2, 3, 4]).unwrap(), None).unwrap();
    let batch = make_batch(&[ga, gb]).unwrap();
    let mut t = Tape::new();
    let s = stage(&mut t, &batch);
    let h = t.constant(x.clone());
    let r = readout(&mut t, h, &s).unwrap();
    let pooled = t.value(r).clone();
    for (g, rows) in [(0usize, 0..2usize), (1, 2..5)] {
        for c in 0..3 {
            let mut acc = 0.0;
            for r in rows.clone() {
                acc += x.get(r, c);
            }
            assert_eq!(pooled.get(g, c), acc);
        }
    }
}

#[test]
fn identical_graphs_pool_identically() {
    let g = five_node();
    let enc = Encoder::init(EncoderConfig::new(3, 8, 3), &mut stream(2, Stream::Init)).unwrap();
    let z = enc.projections(&make_batch(&[g.clone(), g]).unwrap()).unwrap();
    assert_eq!(z.row(0), z.row(1));
}

#[test]
fn single_node_pools_to_its_row() {
    let g = Graph::new(1, vec![], Tensor::row_vector(&[0.3, -0.2, 0.9]).unwrap(), None).unwrap();
    let enc = Encoder::init(EncoderConfig::new(3, 4, 2), &mut stream(2, Stream::Init)).unwrap();
    let batch = make_batch(&[g]).unwrap();
    assert_eq!(enc.node_embeddings(&batch).unwrap(), enc.graph_embeddings(&batch).unwrap());
}

#[test]
fn seeded_init_is_reproducible() {
    let a = Encoder::init(EncoderConfig::new(3, 8, 3), &mut stream(5, Stream::Init)).unwrap();
    let b = Encoder::init(EncoderConfig::new(3, 8, 3), &mut stream(5, Stream::Init)).unwrap();
    assert_eq!(a.params.fingerprint(), b.params.fingerprint());
    // zero biases, glorot weights
    for (name, p) in a.params.iter() {
        if name.ends_with(".b") {
            assert!(p.value.data().iter().all(|&v| v == 0.0));
        } else {
            let limit = (6.0 / (p.value.rows() + p.value.cols()) as f64).sqrt();
            assert!(p.value.data().iter().all(|v| v.abs() <= limit));
        }
    }
}

fn arb_graph() -> impl Strategy<Value = (Graph, u64)> {
    (2usize..9, any::<u64>()).prop_flat_map(|(n, seed)| {
        let m = n * (n - 1) / 2;
        proptest::collection::vec(any::<bool>(), m).prop_map(move |keep| {
            let pairs = (0..n).flat_map(|i| ((i + 1)..n).map(move |j| (i, j)));
            let edges = pairs.zip(&keep).filter(|(_, k)| **k).map(|(p, _)| p).collect();
            let x = common::uniform(&mut ChaCha8Rng::seed_from_u64(seed), n, 4, -1.0, 1.0);
            (Graph::new(n, edges, x, None).unwrap(), seed)
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn relabelling_nodes_changes_nothing((g, seed) in arb_graph()) {
        let enc = Encoder::init(EncoderConfig::new(4, 16, 3), &mut stream(seed, Stream::Init)).unwrap();
        let mut perm: Vec<usize> = (0..g.n()).collect();
        perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 1));
        let p = g.permuted(&perm).unwrap();
        let b0 = make_batch(std::slice::from_ref(&g)).unwrap();
        let b1 = make_batch(std::slice::from_ref(&p)).unwrap();
        let (h0, h1) = (enc.node_embeddings(&b0).unwrap(), enc.node_embeddings(&b1).unwrap());
        for i in 0..g.n() {
            for (a, b) in h0.row(i).iter().zip(h1.row(perm[i])) {
                prop_assert!((a - b).abs() <= 1e-6);
            }
        }
        let (z0, z1) = (enc.projections(&b0).unwrap(), enc.projections(&b1).unwrap());
        prop_assert!(z0.max_abs_diff(&z1).unwrap() <= 1e-6);
    }
}
