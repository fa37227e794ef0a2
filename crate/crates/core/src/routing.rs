//! Spike routing on a 2D many-core mesh.
//!
//! Nodes are numbered row-major, `id = y * width + x`. Links are directed and
//! one hop long. Unicast follows dimension-ordered (XY) routes and falls
//! back to a breadth-first shortest path when the XY route touches a faulty
//! element. Multicast and broadcast send one copy per edge of a
//! breadth-first tree rooted at the source over healthy elements; broadcast
//! targets every other healthy core.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fault::derive_seed;
use crate::network::NetworkSpec;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RoutingError {
    #[error("mesh dimensions must be positive, got {width}x{height}")]
    EmptyMesh { width: usize, height: usize },
    #[error("node {0} is outside the mesh")]
    NoSuchNode(usize),
    #[error("link {0}->{1} does not join neighbouring nodes")]
    NoSuchLink(usize, usize),
    #[error("source node {0} is faulty")]
    FaultySource(usize),
    #[error("no destinations given")]
    NoDestinations,
    #[error("{clusters} clusters but only {healthy} healthy cores")]
    TooFewCores { clusters: usize, healthy: usize },
    #[error("fault fraction {0} outside [0, 1)")]
    InvalidFaultFraction(f64),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mesh {
    pub width: usize,
    pub height: usize,
    pub faulty_nodes: BTreeSet<usize>,
    /// Directed `(from, to)` pairs.
    pub faulty_links: BTreeSet<(usize, usize)>,
}

impl Mesh {
    pub fn new(width: usize, height: usize) -> Result<Self, RoutingError> {
        if width == 0 || height == 0 {
            return Err(RoutingError::EmptyMesh { width, height });
        }
        Ok(Self { width, height, faulty_nodes: BTreeSet::new(), faulty_links: BTreeSet::new() })
    }

    pub fn nodes(&self) -> usize {
        self.width * self.height
    }

    pub fn id(&self, x: usize, y: usize) -> usize {
        y * self.width + x
    }

    pub fn coords(&self, id: usize) -> (usize, usize) {
        (id % self.width, id / self.width)
    }

    pub fn fail_node(&mut self, id: usize) -> Result<(), RoutingError> {
        if id >= self.nodes() {
            return Err(RoutingError::NoSuchNode(id));
        }
        self.faulty_nodes.insert(id);
        Ok(())
    }

    pub fn fail_link(&mut self, from: usize, to: usize) -> Result<(), RoutingError> {
        if from >= self.nodes() || to >= self.nodes() || !self.neighbours(from).contains(&to) {
            return Err(RoutingError::NoSuchLink(from, to));
        }
        self.faulty_links.insert((from, to));
        Ok(())
    }

    pub fn is_healthy(&self, id: usize) -> bool {
        id < self.nodes() && !self.faulty_nodes.contains(&id)
    }

    pub fn healthy_nodes(&self) -> Vec<usize> {
        (0..self.nodes()).filter(|&n| self.is_healthy(n)).collect()
    }

    /// A hop that a packet may take.
    pub fn usable(&self, from: usize, to: usize) -> bool {
        self.is_healthy(from) && self.is_healthy(to) && !self.faulty_links.contains(&(from, to))
    }

    /// Neighbours in the order +x, -x, +y, -y.
    pub fn neighbours(&self, id: usize) -> Vec<usize> {
        let (x, y) = self.coords(id);
        let mut out = Vec::with_capacity(4);
        if x + 1 < self.width {
            out.push(id + 1);
        }
        if x > 0 {
            out.push(id - 1);
        }
        if y + 1 < self.height {
            out.push(id + self.width);
        }
        if y > 0 {
            out.push(id - self.width);
        }
        out
    }

    pub fn manhattan(&self, a: usize, b: usize) -> usize {
        let ((ax, ay), (bx, by)) = (self.coords(a), self.coords(b));
        ax.abs_diff(bx) + ay.abs_diff(by)
    }

    /// Dimension-ordered route: along x first, then along y.
    pub fn xy_path(&self, from: usize, to: usize) -> Vec<usize> {
        let (mut x, mut y) = self.coords(from);
        let (tx, ty) = self.coords(to);
        let mut path = vec![from];
        while x != tx {
            x = if tx > x { x + 1 } else { x - 1 };
            path.push(self.id(x, y));
        }
        while y != ty {
            y = if ty > y { y + 1 } else { y - 1 };
            path.push(self.id(x, y));
        }
        path
    }

    /// Breadth-first parents from `source` over usable hops; `None` marks unreached nodes.
    pub fn bfs_tree(&self, source: usize) -> Vec<Option<usize>> {
        let mut parent = vec![None; self.nodes()];
        if !self.is_healthy(source) {
            return parent;
        }
        parent[source] = Some(source);
        let mut queue = VecDeque::from([source]);
        while let Some(u) = queue.pop_front() {
            for v in self.neighbours(u) {
                if parent[v].is_none() && self.usable(u, v) {
                    parent[v] = Some(u);
                    queue.push_back(v);
                }
            }
        }
        parent
    }
}

fn path_to(parent: &[Option<usize>], target: usize) -> Option<Vec<usize>> {
    parent[target]?;
    let mut path = vec![target];
    let mut cur = target;
    while let Some(p) = parent[cur] {
        if p == cur {
            break;
        }
        path.push(p);
        cur = p;
    }
    path.reverse();
    Some(path)
}

fn path_is_usable(mesh: &Mesh, path: &[usize]) -> bool {
    path.windows(2).all(|w| mesh.usable(w[0], w[1]))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RoutingMode {
    Unicast,
    Multicast,
    Broadcast,
}

impl RoutingMode {
    pub const ALL: [RoutingMode; 3] = [RoutingMode::Unicast, RoutingMode::Multicast, RoutingMode::Broadcast];

    pub fn as_str(self) -> &'static str {
        match self {
            RoutingMode::Unicast => "unicast",
            RoutingMode::Multicast => "multicast",
            RoutingMode::Broadcast => "broadcast",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoutePlan {
    pub mode: RoutingMode,
    pub source: usize,
    pub destinations: Vec<usize>,
    /// Node sequence from the source to each destination, `None` when unreachable.
    pub paths: Vec<Option<Vec<usize>>>,
    /// Directed hops carrying a packet copy. Unicast repeats shared hops.
    pub edges: Vec<(usize, usize)>,
}

impl RoutePlan {
    pub fn reached(&self) -> usize {
        self.paths.iter().filter(|p| p.is_some()).count()
    }

    pub fn unreachable(&self) -> Vec<usize> {
        self.destinations.iter().zip(&self.paths).filter(|(_, p)| p.is_none()).map(|(&d, _)| d).collect()
    }

    pub fn delivered_fraction(&self) -> f64 {
        if self.destinations.is_empty() {
            1.0
        } else {
            self.reached() as f64 / self.destinations.len() as f64
        }
    }

    pub fn total_hops(&self) -> usize {
        self.edges.len()
    }

    /// Longest source-to-destination path among reached destinations (hops).
    pub fn max_latency(&self) -> usize {
        self.paths.iter().flatten().map(|p| p.len() - 1).max().unwrap_or(0)
    }
}

/// Routes one packet. Destinations equal to the source are delivered with
/// zero hops. Broadcast ignores `destinations` and targets every other
/// healthy node.
pub fn route(mesh: &Mesh, mode: RoutingMode, source: usize, destinations: &[usize]) -> Result<RoutePlan, RoutingError> {
    if source >= mesh.nodes() {
        return Err(RoutingError::NoSuchNode(source));
    }
    if !mesh.is_healthy(source) {
        return Err(RoutingError::FaultySource(source));
    }
    if let Some(&d) = destinations.iter().find(|&&d| d >= mesh.nodes()) {
        return Err(RoutingError::NoSuchNode(d));
    }
    let destinations: Vec<usize> = match mode {
        RoutingMode::Broadcast => mesh.healthy_nodes().into_iter().filter(|&n| n != source).collect(),
        _ if destinations.is_empty() => return Err(RoutingError::NoDestinations),
        _ => destinations.to_vec(),
    };
    let mut tree: Option<Vec<Option<usize>>> = None;
    let plan = match mode {
        RoutingMode::Unicast => {
            let mut paths = Vec::with_capacity(destinations.len());
            let mut edges = Vec::new();
            for &d in &destinations {
                let xy = mesh.xy_path(source, d);
                let path = if path_is_usable(mesh, &xy) {
                    Some(xy)
                } else {
                    path_to(tree.get_or_insert_with(|| mesh.bfs_tree(source)), d)
                };
                if let Some(p) = &path {
                    edges.extend(p.windows(2).map(|w| (w[0], w[1])));
                }
                paths.push(path);
            }
            RoutePlan { mode, source, destinations, paths, edges }
        }
        RoutingMode::Multicast | RoutingMode::Broadcast => {
            let parent = mesh.bfs_tree(source);
            let paths: Vec<Option<Vec<usize>>> = destinations.iter().map(|&d| path_to(&parent, d)).collect();
            let edges: BTreeSet<(usize, usize)> =
                paths.iter().flatten().flat_map(|p| p.windows(2).map(|w| (w[0], w[1]))).collect();
            RoutePlan { mode, source, destinations, paths, edges: edges.into_iter().collect() }
        }
    };
    Ok(plan)
}

/// One source core sending to a set of destination cores.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Flow {
    pub source: usize,
    pub destinations: Vec<usize>,
}

/// Core hosting each cluster.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoreMap {
    pub core_of_cluster: Vec<usize>,
}

/// One cluster per healthy core, in row-major core order.
pub fn map_clusters_to_cores(spec: &NetworkSpec, mesh: &Mesh) -> Result<CoreMap, RoutingError> {
    let healthy = mesh.healthy_nodes();
    let clusters = spec.clusters.k;
    if clusters > healthy.len() {
        return Err(RoutingError::TooFewCores { clusters, healthy: healthy.len() });
    }
    Ok(CoreMap { core_of_cluster: healthy[..clusters].to_vec() })
}

/// Clusters that receive at least one synapse from each cluster, excluding itself.
pub fn cluster_fanout(spec: &NetworkSpec) -> Vec<BTreeSet<usize>> {
    let offsets = spec.layer_offsets();
    let cluster_of = &spec.clusters.cluster_of;
    let mut out = vec![BTreeSet::new(); spec.clusters.k];
    for (pair, block) in spec.connectivity.layers.iter().enumerate() {
        for local_pre in 0..block.pre_size {
            let src = cluster_of[offsets[pair] + local_pre];
            for &c in &block.col[block.row_ptr[local_pre]..block.row_ptr[local_pre + 1]] {
                let dst = cluster_of[offsets[pair + 1] + c as usize];
                if dst != src {
                    out[src].insert(dst);
                }
            }
        }
    }
    out
}

/// Inter-core traffic implied by inter-cluster synapses. Clusters that only
/// talk to themselves produce no flow.
pub fn traffic_from_fanout(fanout: &[BTreeSet<usize>], map: &CoreMap) -> Vec<Flow> {
    fanout
        .iter()
        .enumerate()
        .filter(|(_, dst)| !dst.is_empty())
        .map(|(c, dst)| Flow {
            source: map.core_of_cluster[c],
            destinations: dst.iter().map(|&d| map.core_of_cluster[d]).collect(),
        })
        .collect()
}

/// Traffic for [`evaluate_modes`].
#[derive(Debug, Clone, PartialEq)]
pub enum Traffic {
    /// Fixed flows. Source cores are never faulted.
    Fixed(Vec<Flow>),
    /// Per-cluster fanout; clusters are remapped onto the healthy cores of
    /// every faulted mesh.
    Clusters(Vec<BTreeSet<usize>>),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoutingRow {
    pub mode: RoutingMode,
    pub fault_fraction: f64,
    pub seed: u64,
    pub delivered: f64,
    pub total_hops: usize,
    pub max_latency: usize,
}

/// Totals over all flows routed in one mode.
pub fn route_all(mesh: &Mesh, mode: RoutingMode, flows: &[Flow]) -> Result<(f64, usize, usize), RoutingError> {
    let (mut reached, mut wanted, mut hops, mut latency) = (0, 0, 0, 0);
    for f in flows {
        let plan = route(mesh, mode, f.source, &f.destinations)?;
        reached += plan.reached();
        wanted += plan.destinations.len();
        hops += plan.total_hops();
        latency = latency.max(plan.max_latency());
    }
    let delivered = if wanted == 0 { 1.0 } else { reached as f64 / wanted as f64 };
    Ok((delivered, hops, latency))
}

/// Faulty node sets for one seed. The set for a larger fraction contains the
/// set for every smaller one.
pub fn nested_faults(mesh: &Mesh, protected: &BTreeSet<usize>, fractions: &[f64], seed: u64) -> Vec<BTreeSet<usize>> {
    let mut order: Vec<usize> = (0..mesh.nodes()).filter(|n| !protected.contains(n)).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    fractions
        .iter()
        .map(|f| order[..((f * mesh.nodes() as f64).round() as usize).min(order.len())].iter().copied().collect())
        .collect()
}

/// Routes the traffic in every mode for every fault fraction and seed.
/// Rows are ordered by seed, fault fraction, then mode.
pub fn evaluate_modes(
    base: &Mesh,
    traffic: &Traffic,
    fault_fractions: &[f64],
    seeds: &[u64],
) -> Result<Vec<RoutingRow>, RoutingError> {
    if let Some(&f) = fault_fractions.iter().find(|f| !(0.0..1.0).contains(*f)) {
        return Err(RoutingError::InvalidFaultFraction(f));
    }
    let protected: BTreeSet<usize> = match traffic {
        Traffic::Fixed(flows) => flows.iter().map(|f| f.source).collect(),
        Traffic::Clusters(_) => BTreeSet::new(),
    };
    let per_seed: Result<Vec<Vec<RoutingRow>>, RoutingError> = seeds
        .par_iter()
        .map(|&seed| {
            let sets = nested_faults(base, &protected, fault_fractions, derive_seed(seed, 0x4e0c));
            let mut rows = Vec::new();
            for (&fault_fraction, faulty) in fault_fractions.iter().zip(sets) {
                let mut mesh = base.clone();
                mesh.faulty_nodes.extend(faulty);
                let flows = match traffic {
                    Traffic::Fixed(flows) => flows.clone(),
                    Traffic::Clusters(fanout) => {
                        let healthy = mesh.healthy_nodes();
                        if fanout.len() > healthy.len() {
                            return Err(RoutingError::TooFewCores { clusters: fanout.len(), healthy: healthy.len() });
                        }
                        traffic_from_fanout(fanout, &CoreMap { core_of_cluster: healthy[..fanout.len()].to_vec() })
                    }
                };
                for mode in RoutingMode::ALL {
                    let (delivered, total_hops, max_latency) = route_all(&mesh, mode, &flows)?;
                    rows.push(RoutingRow { mode, fault_fraction, seed, delivered, total_hops, max_latency });
                }
            }
            Ok(rows)
        })
        .collect();
    Ok(per_seed?.into_iter().flatten().collect())
}

/// Seed-averaged metrics per mode and fault fraction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoutingSummary {
    pub mode: RoutingMode,
    pub fault_fraction: f64,
    pub delivered: f64,
    pub total_hops: f64,
    pub max_latency: f64,
}

pub fn summarize(rows: &[RoutingRow]) -> Vec<RoutingSummary> {
    let mut groups: BTreeMap<(RoutingMode, u64), Vec<&RoutingRow>> = BTreeMap::new();
    for r in rows {
        groups.entry((r.mode, r.fault_fraction.to_bits())).or_default().push(r);
    }
    let mut out: Vec<RoutingSummary> = groups
        .into_iter()
        .map(|((mode, f), rs)| {
            let k = rs.len() as f64;
            RoutingSummary {
                mode,
                fault_fraction: f64::from_bits(f),
                delivered: rs.iter().map(|r| r.delivered).sum::<f64>() / k,
                total_hops: rs.iter().map(|r| r.total_hops as f64).sum::<f64>() / k,
                max_latency: rs.iter().map(|r| r.max_latency as f64).sum::<f64>() / k,
            }
        })
        .collect();
    out.sort_by(|a, b| a.fault_fraction.total_cmp(&b.fault_fraction).then(a.mode.cmp(&b.mode)));
    out
}

/// Columns `mode, fault_fraction, seed, delivered, total_hops, max_latency`.
pub fn write_routing_csv<W: Write>(rows: &[RoutingRow], w: W) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{assign_clusters, build_feedforward, ClusterPolicy, Topology, WeightInit};

    #[test]
    fn corner_to_corner_is_six_hops() {
        let mesh = Mesh::new(4, 4).unwrap();
        let plan = route(&mesh, RoutingMode::Unicast, 0, &[mesh.id(3, 3)]).unwrap();
        assert_eq!(plan.total_hops(), 6);
        assert_eq!(plan.max_latency(), 6);
    }

    #[test]
    fn broadcast_spans_the_mesh() {
        let mesh = Mesh::new(4, 4).unwrap();
        let plan = route(&mesh, RoutingMode::Broadcast, 5, &[]).unwrap();
        assert_eq!(plan.total_hops(), 15);
        assert_eq!(plan.delivered_fraction(), 1.0);
    }

    #[test]
    fn detour_around_the_xy_turn() {
        let mut mesh = Mesh::new(4, 4).unwrap();
        mesh.fail_node(mesh.id(3, 0)).unwrap();
        let plan = route(&mesh, RoutingMode::Unicast, 0, &[mesh.id(3, 3)]).unwrap();
        let path = plan.paths[0].as_ref().unwrap();
        assert!(path.len() - 1 >= 6);
        assert!(path.iter().all(|&n| mesh.is_healthy(n)));
    }

    #[test]
    fn faulty_source_is_an_error() {
        let mut mesh = Mesh::new(3, 3).unwrap();
        mesh.fail_node(0).unwrap();
        assert_eq!(route(&mesh, RoutingMode::Multicast, 0, &[4]), Err(RoutingError::FaultySource(0)));
        assert!(route(&Mesh::new(3, 3).unwrap(), RoutingMode::Unicast, 0, &[]).is_err());
    }

    #[test]
    fn unreachable_destinations_are_recorded() {
        let mut mesh = Mesh::new(3, 3).unwrap();
        mesh.fail_node(1).unwrap();
        mesh.fail_node(3).unwrap();
        let plan = route(&mesh, RoutingMode::Unicast, 8, &[0, 4]).unwrap();
        assert_eq!(plan.unreachable(), vec![0]);
        assert_eq!(plan.delivered_fraction(), 0.5);
    }

    #[test]
    fn faulty_link_is_avoided() {
        let mut mesh = Mesh::new(3, 1).unwrap();
        mesh.fail_link(0, 1).unwrap();
        assert!(mesh.fail_link(0, 2).is_err());
        let plan = route(&mesh, RoutingMode::Unicast, 0, &[2]).unwrap();
        assert_eq!(plan.reached(), 0);
        assert_eq!(route(&mesh, RoutingMode::Unicast, 2, &[0]).unwrap().reached(), 1);
    }

    #[test]
    fn seven_clusters_fill_the_first_cores() {
        let spec = build_feedforward(Topology::new(vec![14, 7]), 1.0, WeightInit::default(), 0).unwrap();
        let clusters = assign_clusters(&spec, 7, ClusterPolicy::ByLayerBlock).unwrap();
        let spec = spec.with_clusters(clusters);
        let mesh = Mesh::new(3, 3).unwrap();
        let map = map_clusters_to_cores(&spec, &mesh).unwrap();
        assert_eq!(map.core_of_cluster, (0..7).collect::<Vec<_>>());
        assert_eq!(mesh.coords(6), (0, 2));
        let mut broken = mesh.clone();
        for n in 0..3 {
            broken.fail_node(n).unwrap();
        }
        assert!(matches!(map_clusters_to_cores(&spec, &broken), Err(RoutingError::TooFewCores { .. })));
    }

    #[test]
    fn one_cluster_means_no_mesh_traffic() {
        let spec = build_feedforward(Topology::new(vec![8, 4]), 1.0, WeightInit::default(), 0).unwrap();
        let mesh = Mesh::new(2, 2).unwrap();
        let map = map_clusters_to_cores(&spec, &mesh).unwrap();
        let flows = traffic_from_fanout(&cluster_fanout(&spec), &map);
        assert!(flows.is_empty());
        assert_eq!(route_all(&mesh, RoutingMode::Unicast, &flows).unwrap(), (1.0, 0, 0));
    }

    #[test]
    fn fault_free_bench_delivers_everything() {
        let mesh = Mesh::new(4, 4).unwrap();
        let flows = vec![Flow { source: 0, destinations: vec![5, 15, 3] }, Flow { source: 9, destinations: vec![2] }];
        let rows = evaluate_modes(&mesh, &Traffic::Fixed(flows), &[0.0], &[1, 2]).unwrap();
        assert_eq!(rows.len(), 6);
        assert!(rows.iter().all(|r| r.delivered == 1.0));
        let mut buf = Vec::new();
        write_routing_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("mode,fault_fraction,seed,delivered,total_hops,max_latency\nunicast,0.0,1,1.0,"));
    }

    #[test]
    fn nested_fault_sets_grow() {
        let mesh = Mesh::new(5, 5).unwrap();
        let sets = nested_faults(&mesh, &BTreeSet::from([0]), &[0.0, 0.1, 0.3], 7);
        assert_eq!(sets.iter().map(BTreeSet::len).collect::<Vec<_>>(), vec![0, 3, 8]);
        assert!(sets[1].is_subset(&sets[2]) && !sets[2].contains(&0));
    }
}
