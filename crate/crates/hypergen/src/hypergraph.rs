//! Hypergraph representation, file I/O, and summary statistics.
//!
//! A hypergraph is a node count `n` together with an ordered list of
//! hyperlinks, each a sorted set of node ids in `[0, n)`. Hyperlinks of any
//! order (including empty) are allowed, and the same hyperlink may occur
//! multiple times.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// On-disk hypergraph formats.
///
/// `Lines`: optional first line `# n=<int>`, then one hyperlink per line as
/// ASCII decimal ids separated by single spaces, `\n` terminated.
/// `Jsonl`: one JSON object per line with field `"nodes"`, plus an optional
/// leading header object with field `"n"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HypergraphFormat {
    Lines,
    Jsonl,
}

/// A hypergraph on nodes `[0, n)` with an ordered multiset of hyperlinks.
///
/// Node ids are 0-based internally; 1-based ids in input files are not
/// remapped (an id of 5 implies `n >= 6`). Hyperlinks are stored as sorted
/// id sequences rather than bit masks since typical orders are much smaller
/// than `n`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Hypergraph {
    n: usize,
    links: Vec<Vec<u32>>,
}

impl Hypergraph {
    /// Build a hypergraph, validating that every link is a strictly
    /// increasing sequence of ids in `[0, n)`.
    pub fn new(n: usize, links: Vec<Vec<u32>>) -> Result<Self> {
        for (j, link) in links.iter().enumerate() {
            for w in link.windows(2) {
                if w[0] >= w[1] {
                    return Err(Error::Validation(format!(
                        "link {j} is not strictly increasing"
                    )));
                }
            }
            if let Some(&last) = link.last() {
                if last as usize >= n {
                    return Err(Error::Validation(format!(
                        "link {j} contains id {last} >= n={n}"
                    )));
                }
            }
        }
        Ok(Self { n, links })
    }

    /// Build from raw id lists: each link is deduplicated and sorted, and
    /// `n` is raised to cover the largest id if needed.
    pub fn from_raw_links(n: usize, raw: Vec<Vec<u32>>) -> Self {
        let mut links = Vec::with_capacity(raw.len());
        let mut max_n = n;
        for mut link in raw {
            link.sort_unstable();
            link.dedup();
            if let Some(&last) = link.last() {
                max_n = max_n.max(last as usize + 1);
            }
            links.push(link);
        }
        Self { n: max_n, links }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of hyperlinks `m`.
    pub fn m(&self) -> usize {
        self.links.len()
    }

    pub fn links(&self) -> &[Vec<u32>] {
        &self.links
    }

    pub fn link(&self, j: usize) -> &[u32] {
        &self.links[j]
    }

    /// Sum of hyperlink orders.
    pub fn total_order(&self) -> usize {
        self.links.iter().map(|e| e.len()).sum()
    }

    /// Dense binary incidence matrix `B` with `B[j, i] = 1` iff node `i` is
    /// on hyperlink `j`.
    pub fn incidence_matrix(&self) -> Array2<f64> {
        let mut b = Array2::zeros((self.m(), self.n));
        for (j, link) in self.links.iter().enumerate() {
            for &i in link {
                b[(j, i as usize)] = 1.0;
            }
        }
        b
    }
}

/// First and second sample moments of the node inclusion indicators.
///
/// `mean[i]` is the normalized frequency of node `i` over the `m` links;
/// `cov` is the `n x n` covariance of the binary indicator vectors computed
/// with `1/m` normalization, so `cov[i, i] = mean[i] * (1 - mean[i])`.
#[derive(Debug, Clone)]
pub struct CooccurrenceStats {
    pub mean: Array1<f64>,
    pub cov: Array2<f64>,
}

/// Compute node frequency means and indicator covariances.
///
/// Counting is done in integers so the result is independent of any
/// parallel accumulation order.
pub fn cooccurrence_stats(h: &Hypergraph) -> Result<CooccurrenceStats> {
    let m = h.m();
    let n = h.n();
    if m == 0 {
        return Err(Error::EmptyInput(
            "cooccurrence_stats needs at least one hyperlink".into(),
        ));
    }
    let mut counts = vec![0u64; n];
    let mut pair_counts = vec![0u64; n * n];
    for link in h.links() {
        for &i in link {
            counts[i as usize] += 1;
        }
        for &i in link {
            for &k in link {
                pair_counts[i as usize * n + k as usize] += 1;
            }
        }
    }
    let mf = m as f64;
    let mean = Array1::from_iter(counts.iter().map(|&c| c as f64 / mf));
    let mut cov = Array2::zeros((n, n));
    for i in 0..n {
        for k in 0..n {
            cov[(i, k)] = pair_counts[i * n + k] as f64 / mf - mean[i] * mean[k];
        }
    }
    Ok(CooccurrenceStats { mean, cov })
}

/// Per-node degrees and the histogram of hyperlink orders.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DegreeSummary {
    /// `node_degrees[i]` = number of hyperlinks containing node `i`.
    pub node_degrees: Vec<u64>,
    /// Map from hyperlink order to its multiplicity.
    pub order_counts: BTreeMap<usize, u64>,
}

pub fn degree_summary(h: &Hypergraph) -> DegreeSummary {
    let mut node_degrees = vec![0u64; h.n()];
    let mut order_counts = BTreeMap::new();
    for link in h.links() {
        *order_counts.entry(link.len()).or_insert(0) += 1;
        for &i in link {
            node_degrees[i as usize] += 1;
        }
    }
    DegreeSummary {
        node_degrees,
        order_counts,
    }
}

#[derive(Deserialize)]
struct JsonlRecord {
    #[serde(default)]
    n: Option<usize>,
    #[serde(default)]
    nodes: Option<Vec<i64>>,
}

/// Load a hypergraph from disk.
///
/// Links are deduplicated and sorted; `n` comes from the header when
/// present, otherwise from `1 + max id`. Negative ids are rejected.
pub fn load_hypergraph(path: impl AsRef<Path>, format: HypergraphFormat) -> Result<Hypergraph> {
    let reader = BufReader::new(File::open(path)?);
    let mut header_n: Option<usize> = None;
    let mut raw: Vec<Vec<u32>> = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        match format {
            HypergraphFormat::Lines => {
                if idx == 0 && line.starts_with('#') {
                    let rest = line.trim_start_matches('#').trim();
                    if let Some(v) = rest.strip_prefix("n=") {
                        header_n = Some(v.trim().parse().map_err(|_| Error::Parse {
                            line: lineno,
                            msg: format!("bad header {line:?}"),
                        })?);
                    }
                    continue;
                }
                let mut ids = Vec::new();
                for tok in line.split_whitespace() {
                    let v: i64 = tok.parse().map_err(|_| Error::Parse {
                        line: lineno,
                        msg: format!("expected integer id, got {tok:?}"),
                    })?;
                    if v < 0 {
                        return Err(Error::Validation(format!(
                            "negative node id {v} at line {lineno}"
                        )));
                    }
                    ids.push(v as u32);
                }
                raw.push(ids);
            }
            HypergraphFormat::Jsonl => {
                if line.trim().is_empty() {
                    continue;
                }
                let rec: JsonlRecord =
                    serde_json::from_str(&line).map_err(|e| Error::Parse {
                        line: lineno,
                        msg: e.to_string(),
                    })?;
                match (rec.nodes, rec.n) {
                    (Some(nodes), _) => {
                        let mut ids = Vec::with_capacity(nodes.len());
                        for v in nodes {
                            if v < 0 {
                                return Err(Error::Validation(format!(
                                    "negative node id {v} at line {lineno}"
                                )));
                            }
                            ids.push(v as u32);
                        }
                        raw.push(ids);
                    }
                    (None, Some(n)) => header_n = Some(n),
                    (None, None) => {
                        return Err(Error::Parse {
                            line: lineno,
                            msg: "object has neither \"nodes\" nor \"n\"".into(),
                        })
                    }
                }
            }
        }
    }
    let h = Hypergraph::from_raw_links(0, raw);
    match header_n {
        Some(n) => {
            if n < h.n() {
                return Err(Error::Validation(format!(
                    "header n={n} smaller than 1 + max id = {}",
                    h.n()
                )));
            }
            Ok(Hypergraph {
                n,
                links: h.links,
            })
        }
        None => Ok(h),
    }
}

/// Save a hypergraph; `lines` output round-trips bit-exactly through
/// [`load_hypergraph`].
pub fn save_hypergraph(
    h: &Hypergraph,
    path: impl AsRef<Path>,
    format: HypergraphFormat,
) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    match format {
        HypergraphFormat::Lines => {
            writeln!(w, "# n={}", h.n())?;
            for link in h.links() {
                let row: Vec<String> = link.iter().map(|i| i.to_string()).collect();
                writeln!(w, "{}", row.join(" "))?;
            }
        }
        HypergraphFormat::Jsonl => {
            writeln!(w, "{}", serde_json::json!({ "n": h.n() }))?;
            for link in h.links() {
                writeln!(w, "{}", serde_json::json!({ "nodes": link }))?;
            }
        }
    }
    w.flush()?;
    Ok(())
}
