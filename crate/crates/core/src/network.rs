//! Layered, clustered network construction.
//!
//! Connectivity between consecutive layers is held as `M = A ⊙ R ⊙ M̂`:
//! the binary adjacency `A` is the sparsity pattern of a compressed-row store
//! keyed by presynaptic neuron, and each stored edge carries its transmission
//! probability `R` and dense weight `M̂`. Edges are numbered globally in
//! storage order (layer pair, then presynaptic row, then column).

use std::collections::BTreeSet;
use std::sync::Arc;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{AstrocyteParams, NeuronParams};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetworkError {
    #[error("topology needs at least two non-empty layers, got {0:?}")]
    EmptyTopology(Vec<usize>),
    #[error("density {0} is outside (0, 1]")]
    InvalidDensity(f64),
    #[error("invalid weight initialisation: {0}")]
    InvalidWeightInit(String),
    #[error("cluster count {k} is outside [1, {neurons}]")]
    InvalidClusterCount { k: usize, neurons: usize },
    #[error("unknown cluster {0}")]
    UnknownCluster(usize),
    #[error("unknown layer {0}")]
    UnknownLayer(usize),
    #[error("astrocyte budget must be at least 1")]
    ZeroBudget,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
}

/// Synapse counting convention.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CountMode {
    Unidirectional,
    /// Each edge counted in both directions (the convention behind 6,918,144).
    #[default]
    Bidirectional,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Topology {
    pub layer_sizes: Vec<usize>,
    #[serde(default)]
    pub count_mode: CountMode,
}

impl Topology {
    pub fn new(layer_sizes: Vec<usize>) -> Self {
        Self { layer_sizes, count_mode: CountMode::default() }
    }

    pub fn validate(&self) -> Result<(), NetworkError> {
        if self.layer_sizes.len() < 2 || self.layer_sizes.iter().any(|&n| n == 0) {
            return Err(NetworkError::EmptyTopology(self.layer_sizes.clone()));
        }
        Ok(())
    }

    pub fn total_neurons(&self) -> usize {
        self.layer_sizes.iter().sum()
    }

    /// Global index of the first neuron of each layer, plus the total at the end.
    pub fn layer_offsets(&self) -> Vec<usize> {
        let mut offsets = Vec::with_capacity(self.layer_sizes.len() + 1);
        let mut acc = 0;
        offsets.push(0);
        for &n in &self.layer_sizes {
            acc += n;
            offsets.push(acc);
        }
        offsets
    }
}

/// Edges from layer `l` to layer `l + 1` in compressed-row form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerConnectivity {
    pub pre_size: usize,
    pub post_size: usize,
    /// `row_ptr[j]..row_ptr[j + 1]` indexes the outgoing edges of presynaptic `j`.
    pub row_ptr: Vec<usize>,
    /// Postsynaptic index local to the next layer.
    pub col: Vec<u32>,
    /// Stochastic transmission kernel `R`, one entry per stored edge.
    pub transmission: Vec<f64>,
    /// Dense weights `M̂`, one entry per stored edge.
    pub weight: Vec<f64>,
}

impl LayerConnectivity {
    pub fn nnz(&self) -> usize {
        self.col.len()
    }

    pub fn validate(&self) -> Result<(), NetworkError> {
        let nnz = self.col.len();
        let ok = self.row_ptr.len() == self.pre_size + 1
            && self.row_ptr.first() == Some(&0)
            && self.row_ptr.last() == Some(&nnz)
            && self.row_ptr.windows(2).all(|w| w[0] <= w[1])
            && self.transmission.len() == nnz
            && self.weight.len() == nnz
            && self.col.iter().all(|&c| (c as usize) < self.post_size);
        if !ok {
            return Err(NetworkError::ShapeMismatch(format!(
                "layer block {}x{} with {} edges is inconsistent",
                self.pre_size, self.post_size, nnz
            )));
        }
        if self.transmission.iter().any(|r| !(0.0..=1.0).contains(r)) {
            return Err(NetworkError::ShapeMismatch("transmission probabilities must lie in [0, 1]".into()));
        }
        Ok(())
    }

    /// Effective weight `A ⊙ R ⊙ M̂` of stored edge `pos`.
    #[inline]
    pub fn effective(&self, pos: usize) -> f64 {
        self.transmission[pos] * self.weight[pos]
    }

    pub fn heap_bytes(&self) -> usize {
        self.row_ptr.capacity() * std::mem::size_of::<usize>()
            + self.col.capacity() * std::mem::size_of::<u32>()
            + (self.transmission.capacity() + self.weight.capacity()) * std::mem::size_of::<f64>()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Connectivity {
    pub layers: Vec<LayerConnectivity>,
}

/// Location of a global edge index.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EdgeRef {
    pub pair: usize,
    pub pos: usize,
    /// Global presynaptic neuron.
    pub pre: usize,
    /// Global postsynaptic neuron.
    pub post: usize,
}

impl Connectivity {
    pub fn edge_count(&self) -> usize {
        self.layers.iter().map(LayerConnectivity::nnz).sum()
    }

    /// Global index of the first edge of each layer pair, plus the total.
    pub fn edge_offsets(&self) -> Vec<usize> {
        let mut out = vec![0];
        for l in &self.layers {
            out.push(out.last().unwrap() + l.nnz());
        }
        out
    }

    pub fn heap_bytes(&self) -> usize {
        self.layers.iter().map(LayerConnectivity::heap_bytes).sum()
    }
}

/// Distribution of the dense weights `M̂`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum WeightInit {
    /// Uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`, fan-in being the full
    /// size of the presynaptic layer.
    #[default]
    UniformFanIn,
    Uniform {
        low: f64,
        high: f64,
    },
    Normal {
        mean: f64,
        std: f64,
    },
}

impl WeightInit {
    fn sampler(&self, fan_in: usize) -> Result<WeightSampler, NetworkError> {
        match *self {
            WeightInit::UniformFanIn => {
                let bound = 1.0 / (fan_in as f64).sqrt();
                Ok(WeightSampler::Uniform(-bound, bound))
            }
            WeightInit::Uniform { low, high } if low.is_finite() && high.is_finite() && low <= high => {
                Ok(WeightSampler::Uniform(low, high))
            }
            WeightInit::Normal { mean, std } => Normal::new(mean, std)
                .map(WeightSampler::Normal)
                .map_err(|e| NetworkError::InvalidWeightInit(e.to_string())),
            other => Err(NetworkError::InvalidWeightInit(format!("{other:?}"))),
        }
    }
}

enum WeightSampler {
    Uniform(f64, f64),
    Normal(Normal<f64>),
}

impl WeightSampler {
    fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        match self {
            WeightSampler::Uniform(lo, hi) if lo == hi => *lo,
            WeightSampler::Uniform(lo, hi) => rng.gen_range(*lo..*hi),
            WeightSampler::Normal(n) => n.sample(rng),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClusterPolicy {
    /// Each layer is cut into `k` contiguous blocks whose sizes differ by at most one.
    #[default]
    ByLayerBlock,
    /// Global neuron index modulo `k`.
    RoundRobin,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterMap {
    pub k: usize,
    pub cluster_of: Vec<usize>,
    /// Layers in which each cluster owns at least one neuron.
    pub layers_within: Vec<Vec<usize>>,
}

impl ClusterMap {
    pub fn single(topology: &Topology) -> Self {
        Self {
            k: 1,
            cluster_of: vec![0; topology.total_neurons()],
            layers_within: vec![(0..topology.layer_sizes.len()).collect()],
        }
    }

    pub fn members(&self, cluster: usize) -> impl Iterator<Item = usize> + '_ {
        self.cluster_of.iter().enumerate().filter(move |(_, &c)| c == cluster).map(|(i, _)| i)
    }
}

/// Astrocyte-to-astrocyte coupling. Only the uncoupled case is modelled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AstrocyteCoupling {
    #[default]
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Astrocyte {
    pub id: usize,
    pub cluster: usize,
    pub layer: usize,
    /// Covered global neuron indices, ascending.
    pub covered: Vec<usize>,
    pub params: AstrocyteParams,
    #[serde(default = "enabled_default")]
    pub enabled: bool,
}

fn enabled_default() -> bool {
    true
}

impl Astrocyte {
    /// Synapse-to-astrocyte weight: uniform over the covered neurons.
    pub fn coverage_weight(&self) -> f64 {
        1.0 / self.covered.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AstrocyteRoster {
    pub astrocytes: Vec<Astrocyte>,
    pub neurons_per_astrocyte_budget: usize,
    #[serde(default)]
    pub coupling: AstrocyteCoupling,
}

impl Default for AstrocyteRoster {
    fn default() -> Self {
        Self { astrocytes: Vec::new(), neurons_per_astrocyte_budget: 4452, coupling: AstrocyteCoupling::None }
    }
}

impl AstrocyteRoster {
    pub fn enabled(&self) -> impl Iterator<Item = &Astrocyte> {
        self.astrocytes.iter().filter(|a| a.enabled)
    }

    pub fn count_in(&self, cluster: usize, layer: usize) -> usize {
        self.astrocytes.iter().filter(|a| a.cluster == cluster && a.layer == layer).count()
    }

    pub fn is_covered(&self, neuron: usize) -> bool {
        self.astrocytes.iter().any(|a| a.covered.binary_search(&neuron).is_ok())
    }
}

/// A complete network description. Cheap to clone: the edge store is shared.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub topology: Topology,
    pub connectivity: Arc<Connectivity>,
    pub clusters: ClusterMap,
    pub roster: AstrocyteRoster,
    pub neuron_params: NeuronParams,
    /// Parameters given to newly attached astrocytes.
    pub astrocyte_params: AstrocyteParams,
    pub seed: u64,
}

impl NetworkSpec {
    /// Assembles a spec from parts, checking every size.
    pub fn from_parts(topology: Topology, connectivity: Connectivity, seed: u64) -> Result<Self, NetworkError> {
        topology.validate()?;
        if connectivity.layers.len() + 1 != topology.layer_sizes.len() {
            return Err(NetworkError::ShapeMismatch(format!(
                "{} layers need {} connectivity blocks, got {}",
                topology.layer_sizes.len(),
                topology.layer_sizes.len() - 1,
                connectivity.layers.len()
            )));
        }
        for (l, block) in connectivity.layers.iter().enumerate() {
            let (pre, post) = (topology.layer_sizes[l], topology.layer_sizes[l + 1]);
            if block.pre_size != pre || block.post_size != post {
                return Err(NetworkError::ShapeMismatch(format!(
                    "layer pair {l}: expected {pre}x{post}, got {}x{}",
                    block.pre_size, block.post_size
                )));
            }
            block.validate()?;
        }
        let clusters = ClusterMap::single(&topology);
        Ok(Self {
            topology,
            connectivity: Arc::new(connectivity),
            clusters,
            roster: AstrocyteRoster::default(),
            neuron_params: NeuronParams::default(),
            astrocyte_params: AstrocyteParams::default(),
            seed,
        })
    }

    pub fn total_neurons(&self) -> usize {
        self.topology.total_neurons()
    }

    /// Number of synapses under the topology's counting convention.
    pub fn synapse_count(&self) -> usize {
        self.synapse_count_as(self.topology.count_mode)
    }

    pub fn synapse_count_as(&self, mode: CountMode) -> usize {
        let edges = self.connectivity.edge_count();
        match mode {
            CountMode::Unidirectional => edges,
            CountMode::Bidirectional => 2 * edges,
        }
    }

    pub fn layer_offsets(&self) -> Vec<usize> {
        self.topology.layer_offsets()
    }

    pub fn layer_of(&self, neuron: usize) -> usize {
        let offsets = self.layer_offsets();
        offsets.partition_point(|&o| o <= neuron) - 1
    }

    pub fn layer_range(&self, layer: usize) -> std::ops::Range<usize> {
        let offsets = self.layer_offsets();
        offsets[layer]..offsets[layer + 1]
    }

    pub fn edge_ref(&self, edge: usize) -> Option<EdgeRef> {
        let offsets = self.connectivity.edge_offsets();
        if edge >= *offsets.last().unwrap() {
            return None;
        }
        let pair = offsets.partition_point(|&o| o <= edge) - 1;
        let pos = edge - offsets[pair];
        let block = &self.connectivity.layers[pair];
        let local_pre = block.row_ptr.partition_point(|&p| p <= pos) - 1;
        let neuron_offsets = self.layer_offsets();
        Some(EdgeRef {
            pair,
            pos,
            pre: neuron_offsets[pair] + local_pre,
            post: neuron_offsets[pair + 1] + block.col[pos] as usize,
        })
    }

    /// Global edge indices whose postsynaptic neuron satisfies `keep`.
    pub fn edges_into(&self, mut keep: impl FnMut(usize) -> bool) -> Vec<usize> {
        let neuron_offsets = self.layer_offsets();
        let mut out = Vec::new();
        let mut base = 0;
        for (pair, block) in self.connectivity.layers.iter().enumerate() {
            for (pos, &c) in block.col.iter().enumerate() {
                if keep(neuron_offsets[pair + 1] + c as usize) {
                    out.push(base + pos);
                }
            }
            base += block.nnz();
        }
        out
    }

    /// Assigns clusters, replacing any earlier assignment. Clears the roster.
    pub fn with_clusters(mut self, clusters: ClusterMap) -> Self {
        self.clusters = clusters;
        self.roster.astrocytes.clear();
        self
    }

    /// Copy of this spec without any astrocytes.
    pub fn without_astrocytes(&self) -> Self {
        let mut out = self.clone();
        out.roster.astrocytes.clear();
        out
    }
}

/// Builds a reproducible layered feedforward network.
///
/// Each layer pair gets `ceil(density * n_pre * n_post)` edges sampled without
/// replacement; `R` starts at one and `M̂` is drawn from `weight_init`.
pub fn build_feedforward(
    topology: Topology,
    density: f64,
    weight_init: WeightInit,
    seed: u64,
) -> Result<NetworkSpec, NetworkError> {
    topology.validate()?;
    if !(density > 0.0 && density <= 1.0) {
        return Err(NetworkError::InvalidDensity(density));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layers = Vec::with_capacity(topology.layer_sizes.len() - 1);
    for pair in topology.layer_sizes.windows(2) {
        let (pre, post) = (pair[0], pair[1]);
        let sampler = weight_init.sampler(pre)?;
        let total = pre * post;
        let wanted = ((density * total as f64).ceil() as usize).clamp(1, total);

        let (row_ptr, col) = if wanted == total {
            let row_ptr = (0..=pre).map(|j| j * post).collect();
            let col = (0..pre).flat_map(|_| 0..post as u32).collect();
            (row_ptr, col)
        } else {
            let mut picked = index::sample(&mut rng, total, wanted).into_vec();
            picked.sort_unstable();
            let mut row_ptr = vec![0usize; pre + 1];
            let mut col = Vec::with_capacity(wanted);
            for flat in picked {
                row_ptr[flat / post + 1] += 1;
                col.push((flat % post) as u32);
            }
            for j in 0..pre {
                row_ptr[j + 1] += row_ptr[j];
            }
            (row_ptr, col)
        };
        let nnz = col.len();
        let weight = (0..nnz).map(|_| sampler.sample(&mut rng)).collect();
        layers.push(LayerConnectivity {
            pre_size: pre,
            post_size: post,
            row_ptr,
            col,
            transmission: vec![1.0; nnz],
            weight,
        });
    }
    NetworkSpec::from_parts(topology, Connectivity { layers }, seed)
}

/// Partitions neurons into `k` clusters.
pub fn assign_clusters(spec: &NetworkSpec, k: usize, policy: ClusterPolicy) -> Result<ClusterMap, NetworkError> {
    let n = spec.total_neurons();
    if k == 0 || k > n {
        return Err(NetworkError::InvalidClusterCount { k, neurons: n });
    }
    let mut cluster_of = Vec::with_capacity(n);
    match policy {
        ClusterPolicy::RoundRobin => cluster_of.extend((0..n).map(|i| i % k)),
        ClusterPolicy::ByLayerBlock => {
            // Which clusters receive the larger blocks rotates from layer to
            // layer, so small layers still populate every cluster overall.
            let mut rotation = 0;
            for &size in &spec.topology.layer_sizes {
                let (base, rem) = (size / k, size % k);
                for c in 0..k {
                    let extra = (c + k - rotation) % k < rem;
                    let block = base + usize::from(extra);
                    cluster_of.extend(std::iter::repeat(c).take(block));
                }
                rotation = (rotation + rem) % k;
            }
        }
    }
    let offsets = spec.layer_offsets();
    let mut layers_within = vec![BTreeSet::new(); k];
    for (layer, w) in offsets.windows(2).enumerate() {
        for &c in &cluster_of[w[0]..w[1]] {
            layers_within[c].insert(layer);
        }
    }
    Ok(ClusterMap {
        k,
        cluster_of,
        layers_within: layers_within.into_iter().map(|s| s.into_iter().collect()).collect(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttachOutcome {
    pub spec: NetworkSpec,
    /// Id of the new astrocyte, `None` when the layer was already fully covered.
    pub astrocyte: Option<usize>,
    pub saturated: bool,
}

/// Adds one astrocyte covering up to `budget` still-uncovered neurons of
/// `layer` inside `cluster`, lowest index first.
pub fn attach_astrocyte(
    spec: &NetworkSpec,
    cluster: usize,
    layer: usize,
    budget: usize,
) -> Result<AttachOutcome, NetworkError> {
    if cluster >= spec.clusters.k {
        return Err(NetworkError::UnknownCluster(cluster));
    }
    if layer >= spec.topology.layer_sizes.len() {
        return Err(NetworkError::UnknownLayer(layer));
    }
    if budget == 0 {
        return Err(NetworkError::ZeroBudget);
    }
    let covered: BTreeSet<usize> = spec
        .roster
        .astrocytes
        .iter()
        .filter(|a| a.cluster == cluster)
        .flat_map(|a| a.covered.iter().copied())
        .collect();
    let picked: Vec<usize> = spec
        .layer_range(layer)
        .filter(|&i| spec.clusters.cluster_of[i] == cluster && !covered.contains(&i))
        .take(budget)
        .collect();
    if picked.is_empty() {
        return Ok(AttachOutcome { spec: spec.clone(), astrocyte: None, saturated: true });
    }
    let mut next = spec.clone();
    let id = next.roster.astrocytes.iter().map(|a| a.id + 1).max().unwrap_or(0);
    next.roster.neurons_per_astrocyte_budget = budget;
    next.roster.astrocytes.push(Astrocyte {
        id,
        cluster,
        layer,
        covered: picked,
        params: spec.astrocyte_params,
        enabled: true,
    });
    Ok(AttachOutcome { spec: next, astrocyte: Some(id), saturated: false })
}

/// Covers every neuron of `layers` (all clusters) with astrocytes of the given budget.
pub fn cover_layers(spec: &NetworkSpec, layers: &[usize], budget: usize) -> Result<NetworkSpec, NetworkError> {
    let mut out = spec.clone();
    for &layer in layers {
        for cluster in 0..spec.clusters.k {
            loop {
                let step = attach_astrocyte(&out, cluster, layer, budget)?;
                if step.saturated {
                    break;
                }
                out = step.spec;
            }
        }
    }
    Ok(out)
}

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }
}

/// Materialises `A ⊙ R ⊙ M̂` for every layer pair, presynaptic rows by
/// postsynaptic columns.
pub fn effective_connectivity(spec: &NetworkSpec) -> Result<Vec<DenseMatrix>, NetworkError> {
    let sizes = &spec.topology.layer_sizes;
    if spec.connectivity.layers.len() + 1 != sizes.len() {
        return Err(NetworkError::ShapeMismatch("connectivity blocks do not match the topology".into()));
    }
    spec.connectivity
        .layers
        .iter()
        .enumerate()
        .map(|(l, block)| {
            if block.pre_size != sizes[l] || block.post_size != sizes[l + 1] {
                return Err(NetworkError::ShapeMismatch(format!("layer pair {l}")));
            }
            block.validate()?;
            let mut m = DenseMatrix::zeros(block.pre_size, block.post_size);
            for j in 0..block.pre_size {
                for pos in block.row_ptr[j]..block.row_ptr[j + 1] {
                    m.data[j * block.post_size + block.col[pos] as usize] = block.effective(pos);
                }
            }
            Ok(m)
        })
        .collect()
}
