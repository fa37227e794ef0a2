use lifa::network::{assign_clusters, build_feedforward, cover_layers, ClusterPolicy, CountMode, Topology, WeightInit};
use proptest::prelude::*;

fn adjacent_products(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| w[0] * w[1]).sum()
}

#[test]
fn table_topology_counts() {
    let sizes = vec![1024, 768, 2048, 512, 100];
    let spec = build_feedforward(Topology::new(sizes.clone()), 1.0, WeightInit::default(), 1).unwrap();
    assert_eq!(spec.total_neurons(), sizes.iter().sum::<usize>());
    assert_eq!(spec.total_neurons(), 4452);
    let uni = 786_432 + 1_572_864 + 1_048_576 + 51_200;
    assert_eq!(adjacent_products(&sizes), uni);
    assert_eq!(spec.synapse_count_as(CountMode::Unidirectional), 3_459_072);
    assert_eq!(spec.synapse_count_as(CountMode::Bidirectional), 6_918_144);
    assert_eq!(spec.synapse_count(), 2 * uni);
}

#[test]
fn two_by_two_dense_has_four_edges() {
    let spec = build_feedforward(Topology::new(vec![2, 2]), 1.0, WeightInit::default(), 0).unwrap();
    assert_eq!(spec.connectivity.edge_count(), 4);
    assert_eq!(spec.synapse_count_as(CountMode::Unidirectional), 4);
}

#[test]
fn invalid_topologies_are_rejected() {
    assert!(build_feedforward(Topology::new(vec![]), 1.0, WeightInit::default(), 0).is_err());
    assert!(build_feedforward(Topology::new(vec![3]), 1.0, WeightInit::default(), 0).is_err());
    assert!(build_feedforward(Topology::new(vec![3, 0, 2]), 1.0, WeightInit::default(), 0).is_err());
    assert!(build_feedforward(Topology::new(vec![3, 2]), 0.0, WeightInit::default(), 0).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn sparse_edge_counts_and_kernel(
        sizes in prop::collection::vec(1usize..20, 2..5),
        density in 0.05f64..=1.0,
        seed in any::<u64>(),
    ) {
        let spec = build_feedforward(Topology::new(sizes.clone()), density, WeightInit::default(), seed).unwrap();
        for (block, w) in spec.connectivity.layers.iter().zip(sizes.windows(2)) {
            let expected = (density * (w[0] * w[1]) as f64).ceil() as usize;
            prop_assert_eq!(block.nnz(), expected);
            prop_assert!(block.transmission.iter().all(|&r| r == 1.0));
            prop_assert!(block.col.iter().all(|&c| (c as usize) < w[1]));
            for j in 0..block.pre_size {
                let row = &block.col[block.row_ptr[j]..block.row_ptr[j + 1]];
                prop_assert!(row.windows(2).all(|p| p[0] < p[1]), "columns sorted and unique");
            }
        }
        let again = build_feedforward(Topology::new(sizes), density, WeightInit::default(), seed).unwrap();
        prop_assert_eq!(spec, again);
    }

    #[test]
    fn layer_blocks_are_balanced(sizes in prop::collection::vec(1usize..30, 2..5), k in 1usize..6) {
        let spec = build_feedforward(Topology::new(sizes.clone()), 1.0, WeightInit::default(), 0).unwrap();
        prop_assume!(k <= spec.total_neurons());
        let map = assign_clusters(&spec, k, ClusterPolicy::ByLayerBlock).unwrap();
        prop_assert_eq!(map.cluster_of.len(), spec.total_neurons());
        prop_assert!(map.cluster_of.iter().all(|&c| c < k));
        for (layer, &size) in sizes.iter().enumerate() {
            let mut counts = vec![0usize; k];
            for n in spec.layer_range(layer) {
                counts[map.cluster_of[n]] += 1;
            }
            let nonzero: Vec<usize> = counts.iter().copied().filter(|&c| c > 0).collect();
            prop_assert_eq!(nonzero.iter().sum::<usize>(), size);
            if size >= k {
                let (lo, hi) = (counts.iter().min().unwrap(), counts.iter().max().unwrap());
                prop_assert!(hi - lo <= 1);
            }
        }
    }

    #[test]
    fn coverage_respects_budget_and_disjointness(
        sizes in prop::collection::vec(1usize..25, 2..4),
        k in 1usize..4,
        budget in 1usize..9,
    ) {
        let spec = build_feedforward(Topology::new(sizes.clone()), 1.0, WeightInit::default(), 3).unwrap();
        prop_assume!(k <= spec.total_neurons());
        let spec = spec.clone().with_clusters(assign_clusters(&spec, k, ClusterPolicy::ByLayerBlock).unwrap());
        let layers: Vec<usize> = (1..sizes.len()).collect();
        let covered = cover_layers(&spec, &layers, budget).unwrap();
        let mut owner = vec![None; covered.total_neurons()];
        for a in &covered.roster.astrocytes {
            prop_assert!(!a.covered.is_empty() && a.covered.len() <= budget);
            for &n in &a.covered {
                prop_assert!(owner[n].is_none(), "neuron {} covered twice", n);
                prop_assert_eq!(covered.clusters.cluster_of[n], a.cluster);
                owner[n] = Some(a.id);
            }
        }
        for &l in &layers {
            prop_assert!(covered.layer_range(l).all(|n| owner[n].is_some()));
        }
    }
}
