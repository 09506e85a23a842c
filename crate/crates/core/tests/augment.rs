use std::collections::BTreeSet;

use gclprior::augment::{apply_augmentation, AugKind, AugmentationPolicy};
use gclprior::graph::Graph;
use gclprior::rng::{stream, Stream};
use gclprior::tensor::Tensor;
use gclprior::Error;
use proptest::prelude::*;

// node i carries feature value i + 1, so relabelled outputs can be traced back
fn tagged(n: usize, keep: &[bool]) -> Graph {
    let pairs = (0..n).flat_map(|i| ((i + 1)..n).map(move |j| (i, j)));
    let edges = pairs.zip(keep).filter(|(_, k)| **k).map(|(p, _)| p).collect();
    Graph::new(n, edges, Tensor::from_fn(n, 1, |i, _| (i + 1) as f64), Some(1)).unwrap()
}

fn arb_tagged() -> impl Strategy<Value = Graph> {
    (1usize..12).prop_flat_map(|n| {
        proptest::collection::vec(any::<bool>(), n * (n - 1) / 2).prop_map(move |k| tagged(n, &k))
    })
}

fn edge_set(g: &Graph) -> BTreeSet<(usize, usize)> {
    g.edges().iter().map(|&(a, b)| (a.min(b), a.max(b))).collect()
}

fn is_valid(g: &Graph) -> bool {
    let set = edge_set(g);
    g.n() >= 1
        && g.x().rows() == g.n()
        && set.len() == g.num_edges()
        && g.edges().iter().all(|&(a, b)| a < g.n() && b < g.n() && a != b)
}

fn assert_induced(orig: &Graph, out: &Graph) {
    let back: Vec<usize> = (0..out.n()).map(|i| out.x().get(i, 0) as usize - 1).collect();
    assert!(back.windows(2).all(|w| w[0] < w[1]), "nodes must be distinct");
    for i in 0..out.n() {
        for j in (i + 1)..out.n() {
            assert_eq!(out.has_edge(i, j), orig.has_edge(back[i], back[j]));
        }
    }
}

#[test]
fn ten_nodes_drop_two() {
    let g = tagged(10, &[true; 45]);
    let out = apply_augmentation(&g, AugKind::NodeDrop, 0.2, &mut stream(0, Stream::Augment)).unwrap();
    assert_eq!(out.n(), 8);
    assert_eq!(out.num_edges(), 28);
}

#[test]
fn kinds_parse_from_config_names() {
    for k in AugKind::ALL {
        assert_eq!(k.name().parse::<AugKind>().unwrap(), k);
    }
    assert!(matches!("dropedge".parse::<AugKind>(), Err(Error::UnknownKind(_))));
}

#[test]
fn policy_defaults() {
    let p = AugmentationPolicy::default();
    assert_eq!((p.first, p.second, p.ratio), (AugKind::NodeDrop, AugKind::NodeDrop, 0.2));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn outputs_are_valid_graphs(g in arb_tagged(), ratio in 0.0f64..=1.0, seed in 0u64..500) {
        let mut rng = stream(seed, Stream::Augment);
        for kind in AugKind::ALL {
            let out = apply_augmentation(&g, kind, ratio, &mut rng).unwrap();
            prop_assert!(is_valid(&out), "{kind} produced an invalid graph");
            prop_assert_eq!(out.label(), g.label());
        }
    }

    #[test]
    fn removal_kinds_give_induced_subgraphs(g in arb_tagged(), ratio in 0.0f64..=1.0, seed in 0u64..500) {
        let mut rng = stream(seed, Stream::Augment);
        let n = g.n() as f64;
        let dropped = apply_augmentation(&g, AugKind::NodeDrop, ratio, &mut rng).unwrap();
        assert_induced(&g, &dropped);
        prop_assert_eq!(dropped.n(), g.n() - ((ratio * n).floor() as usize).min(g.n() - 1));
        let sub = apply_augmentation(&g, AugKind::Subgraph, ratio, &mut rng).unwrap();
        assert_induced(&g, &sub);
        prop_assert_eq!(sub.n(), (((1.0 - ratio) * n).ceil() as usize).max(1));
    }

    #[test]
    fn edge_perturbation_bounds(g in arb_tagged(), ratio in 0.0f64..=1.0, seed in 0u64..500) {
        let out = apply_augmentation(&g, AugKind::EdgePert, ratio, &mut stream(seed, Stream::Augment)).unwrap();
        let k = (ratio * g.num_edges() as f64).floor() as usize;
        let non_edges = g.n() * (g.n() - 1) / 2 - g.num_edges();
        // edge count is preserved whenever enough non-edges exist to rewire into
        if non_edges >= k {
            prop_assert_eq!(out.num_edges(), g.num_edges());
        }
        let (a, b) = (edge_set(&g), edge_set(&out));
        prop_assert!(a.symmetric_difference(&b).count() <= 2 * k);
        prop_assert_eq!(out.x(), g.x());
    }

    #[test]
    fn attribute_mask_zeroes_rows(g in arb_tagged(), ratio in 0.0f64..=1.0, seed in 0u64..500) {
        let out = apply_augmentation(&g, AugKind::AttrMask, ratio, &mut stream(seed, Stream::Augment)).unwrap();
        let zeroed = (0..g.n()).filter(|&i| out.x().get(i, 0) == 0.0).count();
        prop_assert_eq!(zeroed, (ratio * g.n() as f64).floor() as usize);
        prop_assert_eq!(edge_set(&out), edge_set(&g));
    }

    #[test]
    fn zero_ratio_is_identity(g in arb_tagged(), seed in 0u64..500) {
        let mut rng = stream(seed, Stream::Augment);
        for kind in AugKind::ALL {
            prop_assert_eq!(&apply_augmentation(&g, kind, 0.0, &mut rng).unwrap(), &g);
        }
        prop_assert_eq!(&apply_augmentation(&g, AugKind::Identical, 0.7, &mut rng).unwrap(), &g);
    }

    #[test]
    fn ratio_outside_unit_interval_rejected(g in arb_tagged(), ratio in 1.0001f64..5.0) {
        let mut rng = stream(0, Stream::Augment);
        prop_assert!(apply_augmentation(&g, AugKind::NodeDrop, ratio, &mut rng).is_err());
        prop_assert!(apply_augmentation(&g, AugKind::NodeDrop, -ratio, &mut rng).is_err());
    }
}
