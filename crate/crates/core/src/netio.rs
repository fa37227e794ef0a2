//! Network import and export.
//!
//! Binary container, all integers little-endian:
//!
//! | bytes | content |
//! |---|---|
//! | 8 | magic `LIFANET\0` |
//! | 4 | format version (`u32`, currently 1) |
//! | 4 | layer count `L` (`u32`) |
//! | 8 * L | layer sizes (`u64`) |
//! | 1 | count mode (0 unidirectional, 1 bidirectional) |
//! | 8 | seed (`u64`) |
//! | per layer pair | `pre`, `post`, `nnz` (`u64`), `row_ptr` (`(pre + 1) * u64`), `col` (`nnz * u32`), transmission (`nnz * f64`), weight (`nnz * f64`) |
//! | 8 + n | length-prefixed JSON with clusters, roster and parameters |
//!
//! Layered matrix text: a `topology n0 n1 ...` line, then one dense block per
//! layer pair with `n_l` rows of `n_{l+1}` numbers (row = presynaptic neuron).
//! Blank lines and lines starting with `#` are ignored. Nonzero entries
//! become edges with transmission 1.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{AstrocyteParams, NeuronParams};
use crate::network::{
    AstrocyteRoster, ClusterMap, Connectivity, CountMode, LayerConnectivity, NetworkError, NetworkSpec, Topology,
};

pub const MAGIC: &[u8; 8] = b"LIFANET\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum NetIoError {
    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("file truncated at byte offset {offset}: needed {needed} more bytes for {what}")]
    Truncated { offset: usize, needed: usize, what: &'static str },
    #[error("not a network container (bad magic at byte offset 0)")]
    BadMagic,
    #[error("unsupported container version {0}")]
    UnsupportedVersion(u32),
    #[error("malformed container at byte offset {offset}: {message}")]
    Malformed { offset: usize, message: String },
    #[error("line {line}: {message}")]
    Text { line: usize, message: String },
    #[error("layer pair {pair}: expected a {expected_rows}x{expected_cols} matrix, got {actual}")]
    Dimension { pair: usize, expected_rows: usize, expected_cols: usize, actual: String },
    #[error(transparent)]
    Network(#[from] NetworkError),
}

/// Supported weight file formats.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightFormat {
    Binary,
    Text,
}

impl WeightFormat {
    /// `.txt` and `.mat` are text; anything else is binary.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("txt" | "mat") => WeightFormat::Text,
            _ => WeightFormat::Binary,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct Trailer {
    clusters: ClusterMap,
    roster: AstrocyteRoster,
    neuron_params: NeuronParams,
    astrocyte_params: AstrocyteParams,
}

pub fn to_bytes(spec: &NetworkSpec) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(spec.topology.layer_sizes.len() as u32).to_le_bytes());
    for &n in &spec.topology.layer_sizes {
        out.extend_from_slice(&(n as u64).to_le_bytes());
    }
    out.push(match spec.topology.count_mode {
        CountMode::Unidirectional => 0,
        CountMode::Bidirectional => 1,
    });
    out.extend_from_slice(&spec.seed.to_le_bytes());
    for block in &spec.connectivity.layers {
        for v in [block.pre_size, block.post_size, block.nnz()] {
            out.extend_from_slice(&(v as u64).to_le_bytes());
        }
        for &p in &block.row_ptr {
            out.extend_from_slice(&(p as u64).to_le_bytes());
        }
        for &c in &block.col {
            out.extend_from_slice(&c.to_le_bytes());
        }
        for &r in &block.transmission {
            out.extend_from_slice(&r.to_bits().to_le_bytes());
        }
        for &w in &block.weight {
            out.extend_from_slice(&w.to_bits().to_le_bytes());
        }
    }
    let trailer = Trailer {
        clusters: spec.clusters.clone(),
        roster: spec.roster.clone(),
        neuron_params: spec.neuron_params,
        astrocyte_params: spec.astrocyte_params,
    };
    let json = serde_json::to_vec(&trailer).expect("trailer serializes");
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out
}

struct Reader<'b> {
    buf: &'b [u8],
    pos: usize,
}

impl<'b> Reader<'b> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'b [u8], NetIoError> {
        let left = self.buf.len() - self.pos;
        if left < n {
            return Err(NetIoError::Truncated { offset: self.buf.len(), needed: n - left, what });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &'static str) -> Result<u32, NetIoError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &'static str) -> Result<u64, NetIoError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    fn usize(&mut self, what: &'static str) -> Result<usize, NetIoError> {
        let at = self.pos;
        let v = self.u64(what)?;
        usize::try_from(v).map_err(|_| NetIoError::Malformed { offset: at, message: format!("{what} {v} too large") })
    }

    /// Reads a count and checks that `count * unit` bytes could still follow.
    fn count(&mut self, unit: usize, what: &'static str) -> Result<usize, NetIoError> {
        let n = self.usize(what)?;
        let left = self.buf.len() - self.pos;
        match n.checked_mul(unit) {
            Some(bytes) if bytes <= left => Ok(n),
            _ => Err(NetIoError::Truncated {
                offset: self.buf.len(),
                needed: n.saturating_mul(unit).saturating_sub(left),
                what,
            }),
        }
    }
}

pub fn from_bytes(buf: &[u8]) -> Result<NetworkSpec, NetIoError> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(8, "magic")? != MAGIC {
        return Err(NetIoError::BadMagic);
    }
    let version = r.u32("format version")?;
    if version != FORMAT_VERSION {
        return Err(NetIoError::UnsupportedVersion(version));
    }
    let layers = r.u32("layer count")? as usize;
    let layers = {
        let left = buf.len() - r.pos;
        if layers * 8 > left {
            return Err(NetIoError::Truncated { offset: buf.len(), needed: layers * 8 - left, what: "layer sizes" });
        }
        layers
    };
    let mut sizes = Vec::with_capacity(layers);
    for _ in 0..layers {
        sizes.push(r.usize("layer size")?);
    }
    let at = r.pos;
    let count_mode = match r.take(1, "count mode")?[0] {
        0 => CountMode::Unidirectional,
        1 => CountMode::Bidirectional,
        other => return Err(NetIoError::Malformed { offset: at, message: format!("count mode byte {other}") }),
    };
    let seed = r.u64("seed")?;
    let mut blocks = Vec::with_capacity(layers.saturating_sub(1));
    for _ in 1..layers {
        let pre_size = r.usize("presynaptic size")?;
        let post_size = r.usize("postsynaptic size")?;
        let nnz = r.count(4 + 8 + 8, "edge arrays")?;
        let rows =
            pre_size.checked_add(1).ok_or(NetIoError::Malformed { offset: r.pos, message: "row count".into() })?;
        if rows.checked_mul(8).map_or(true, |b| b > buf.len() - r.pos) {
            return Err(NetIoError::Truncated {
                offset: buf.len(),
                needed: rows.saturating_mul(8).saturating_sub(buf.len() - r.pos),
                what: "row pointers",
            });
        }
        let mut row_ptr = Vec::with_capacity(rows);
        for _ in 0..rows {
            row_ptr.push(r.usize("row pointer")?);
        }
        let bytes = r.take(nnz * 4, "column indices")?;
        let col = bytes.chunks_exact(4).map(|c| u32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
        let mut floats = |what| -> Result<Vec<f64>, NetIoError> {
            let bytes = r.take(nnz * 8, what)?;
            Ok(bytes
                .chunks_exact(8)
                .map(|c| f64::from_bits(u64::from_le_bytes(c.try_into().expect("8 bytes"))))
                .collect())
        };
        let transmission = floats("transmission")?;
        let weight = floats("weights")?;
        blocks.push(LayerConnectivity { pre_size, post_size, row_ptr, col, transmission, weight });
    }
    let json_len = r.count(1, "descriptor")?;
    let at = r.pos;
    let trailer: Trailer = serde_json::from_slice(r.take(json_len, "descriptor")?)
        .map_err(|e| NetIoError::Malformed { offset: at, message: e.to_string() })?;
    if r.pos != buf.len() {
        return Err(NetIoError::Malformed { offset: r.pos, message: format!("{} trailing bytes", buf.len() - r.pos) });
    }
    let topology = Topology { layer_sizes: sizes, count_mode };
    let mut spec = NetworkSpec::from_parts(topology, Connectivity { layers: blocks }, seed)?;
    if trailer.clusters.cluster_of.len() != spec.total_neurons() {
        return Err(NetIoError::Malformed { offset: at, message: "cluster map does not cover every neuron".into() });
    }
    spec.clusters = trailer.clusters;
    spec.roster = trailer.roster;
    spec.neuron_params = trailer.neuron_params;
    spec.astrocyte_params = trailer.astrocyte_params;
    Ok(spec)
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> NetIoError + '_ {
    move |source| NetIoError::Io { path: path.display().to_string(), source }
}

pub fn save_binary(spec: &NetworkSpec, path: &Path) -> Result<(), NetIoError> {
    std::fs::write(path, to_bytes(spec)).map_err(io_err(path))
}

/// Parses the layered matrix text format.
pub fn parse_text(text: &str, seed: u64) -> Result<NetworkSpec, NetIoError> {
    let mut lines =
        text.lines().enumerate().map(|(i, l)| (i + 1, l.trim())).filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
    let (line, header) = lines.next().ok_or(NetIoError::Text { line: 0, message: "empty file".into() })?;
    let mut words = header.split_whitespace();
    if words.next() != Some("topology") {
        return Err(NetIoError::Text { line, message: "expected `topology n0 n1 ...`".into() });
    }
    let sizes: Vec<usize> = words
        .map(|w| w.parse().map_err(|_| NetIoError::Text { line, message: format!("bad layer size `{w}`") }))
        .collect::<Result<_, _>>()?;
    let topology = Topology::new(sizes.clone());
    topology.validate()?;
    let rows: Vec<(usize, Vec<f64>)> = lines
        .map(|(line, l)| {
            l.split_whitespace()
                .map(|w| w.parse::<f64>().map_err(|_| NetIoError::Text { line, message: format!("bad number `{w}`") }))
                .collect::<Result<Vec<_>, _>>()
                .map(|v| (line, v))
        })
        .collect::<Result<_, _>>()?;
    let expected_rows: usize = sizes[..sizes.len() - 1].iter().sum();
    let mut next = rows.into_iter();
    let mut blocks = Vec::with_capacity(sizes.len() - 1);
    let mut seen_rows = 0;
    for (pair, w) in sizes.windows(2).enumerate() {
        let (pre, post) = (w[0], w[1]);
        let mut row_ptr = vec![0];
        let (mut col, mut weight) = (Vec::new(), Vec::new());
        for r in 0..pre {
            let Some((line, values)) = next.next() else {
                return Err(NetIoError::Dimension {
                    pair,
                    expected_rows: pre,
                    expected_cols: post,
                    actual: format!("{r} rows before end of file ({seen_rows} of {expected_rows} rows overall)"),
                });
            };
            if values.len() != post {
                return Err(NetIoError::Dimension {
                    pair,
                    expected_rows: pre,
                    expected_cols: post,
                    actual: format!("{} columns in row {r} (line {line})", values.len()),
                });
            }
            if let Some(v) = values.iter().find(|v| !v.is_finite()) {
                return Err(NetIoError::Text { line, message: format!("non-finite weight {v}") });
            }
            for (c, &v) in values.iter().enumerate() {
                if v != 0.0 {
                    col.push(c as u32);
                    weight.push(v);
                }
            }
            row_ptr.push(col.len());
            seen_rows += 1;
        }
        let nnz = col.len();
        blocks.push(LayerConnectivity {
            pre_size: pre,
            post_size: post,
            row_ptr,
            col,
            transmission: vec![1.0; nnz],
            weight,
        });
    }
    if let Some((line, _)) = next.next() {
        return Err(NetIoError::Dimension {
            pair: sizes.len() - 2,
            expected_rows: sizes[sizes.len() - 2],
            expected_cols: sizes[sizes.len() - 1],
            actual: format!("extra rows starting at line {line} (expected {expected_rows} rows overall)"),
        });
    }
    Ok(NetworkSpec::from_parts(topology, Connectivity { layers: blocks }, seed)?)
}

/// Writes the effective weights `R * M` as layered matrix text.
pub fn to_text(spec: &NetworkSpec) -> String {
    let sizes = &spec.topology.layer_sizes;
    let mut out = String::from("topology");
    for n in sizes {
        out.push_str(&format!(" {n}"));
    }
    out.push('\n');
    for (pair, block) in spec.connectivity.layers.iter().enumerate() {
        out.push_str(&format!("# layer {pair} -> {}\n", pair + 1));
        for j in 0..block.pre_size {
            let mut row = vec![0.0; block.post_size];
            for pos in block.row_ptr[j]..block.row_ptr[j + 1] {
                row[block.col[pos] as usize] = block.effective(pos);
            }
            let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            out.push_str(&cells.join(" "));
            out.push('\n');
        }
    }
    out
}

/// Loads a network from either format.
pub fn import_weights(path: &Path, format: WeightFormat) -> Result<NetworkSpec, NetIoError> {
    match format {
        WeightFormat::Binary => from_bytes(&std::fs::read(path).map_err(io_err(path))?),
        WeightFormat::Text => parse_text(&std::fs::read_to_string(path).map_err(io_err(path))?, 0),
    }
}

/// Human-readable summary written next to a saved network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Descriptor {
    pub format_version: u32,
    pub topology: Vec<usize>,
    pub neurons: usize,
    pub synapses_unidirectional: usize,
    pub synapses_bidirectional: usize,
    pub count_mode: CountMode,
    pub clusters: usize,
    pub seed: u64,
    pub astrocytes: usize,
    pub roster: AstrocyteRoster,
}

pub fn descriptor(spec: &NetworkSpec) -> Descriptor {
    Descriptor {
        format_version: FORMAT_VERSION,
        topology: spec.topology.layer_sizes.clone(),
        neurons: spec.total_neurons(),
        synapses_unidirectional: spec.synapse_count_as(CountMode::Unidirectional),
        synapses_bidirectional: spec.synapse_count_as(CountMode::Bidirectional),
        count_mode: spec.topology.count_mode,
        clusters: spec.clusters.k,
        seed: spec.seed,
        astrocytes: spec.roster.astrocytes.len(),
        roster: spec.roster.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{assign_clusters, build_feedforward, cover_layers, ClusterPolicy, WeightInit};

    fn spec() -> NetworkSpec {
        let s = build_feedforward(Topology::new(vec![6, 5, 3]), 0.6, WeightInit::default(), 11).unwrap();
        let s = s.clone().with_clusters(assign_clusters(&s, 2, ClusterPolicy::ByLayerBlock).unwrap());
        cover_layers(&s, &[1], 2).unwrap()
    }

    #[test]
    fn binary_round_trip_is_exact() {
        let s = spec();
        let back = from_bytes(&to_bytes(&s)).unwrap();
        assert_eq!(back, s);
        assert_eq!(to_bytes(&back), to_bytes(&s));
    }

    #[test]
    fn truncation_reports_the_offset() {
        let bytes = to_bytes(&spec());
        for cut in [3, 20, 60, bytes.len() - 1] {
            match from_bytes(&bytes[..cut]) {
                Err(NetIoError::Truncated { offset, .. }) => assert_eq!(offset, cut),
                other => panic!("cut {cut}: {other:?}"),
            }
        }
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(from_bytes(&bad), Err(NetIoError::BadMagic)));
    }

    #[test]
    fn text_zero_is_not_an_edge() {
        let s = parse_text("topology 2 2\n0.5 0\n-1 2\n", 0).unwrap();
        assert_eq!(s.connectivity.edge_count(), 3);
        assert_eq!(s.connectivity.layers[0].transmission, vec![1.0; 3]);
    }

    #[test]
    fn text_shape_errors_name_both_shapes() {
        let err = parse_text("topology 2 2\n0.5 0 1\n-1 2\n", 0).unwrap_err();
        assert!(matches!(err, NetIoError::Dimension { pair: 0, expected_rows: 2, expected_cols: 2, .. }), "{err}");
        assert!(parse_text("topology 2 2\n0.5 0\n", 0).is_err());
        assert!(parse_text("topology 2 2\n1 1\n1 1\n1 1\n", 0).is_err());
    }

    #[test]
    fn text_round_trip_keeps_effective_weights() {
        let s = build_feedforward(Topology::new(vec![4, 3, 2]), 0.7, WeightInit::default(), 2).unwrap();
        let back = parse_text(&to_text(&s), 2).unwrap();
        assert_eq!(back.connectivity, s.connectivity);
    }

    #[test]
    fn descriptor_counts_both_conventions() {
        let d = descriptor(&spec());
        assert_eq!(d.synapses_bidirectional, 2 * d.synapses_unidirectional);
        assert_eq!(d.astrocytes, 3);
    }
}
