//! Compact metric graphs: vertices joined by edges of positive length.
//!
//! Multi-edges are allowed, self-loops are not, and every vertex must be
//! incident to at least one edge. Edges are undirected; the stored
//! orientation only fixes the local coordinate (x = 0 at `source`).

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Edge {
    pub source: usize,
    pub target: usize,
    pub length: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricGraph {
    num_vertices: usize,
    edges: Vec<Edge>,
}

/// Vertex degrees; multi-edges count once per parallel edge.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VertexDegreeTable(Vec<usize>);

impl VertexDegreeTable {
    pub fn degree(&self, v: usize) -> usize {
        self.0[v]
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }
}

impl MetricGraph {
    pub fn new(num_vertices: usize, edges: Vec<Edge>) -> Result<Self> {
        if edges.is_empty() {
            return Err(Error::InvalidGraph("graph has no edges".into()));
        }
        let mut covered = vec![false; num_vertices];
        for (i, e) in edges.iter().enumerate() {
            if e.source >= num_vertices || e.target >= num_vertices {
                return Err(Error::InvalidGraph(format!(
                    "edge {i} references vertex {} but the graph has {num_vertices} vertices",
                    e.source.max(e.target)
                )));
            }
            if e.source == e.target {
                return Err(Error::InvalidGraph(format!(
                    "edge {i} is a self-loop at vertex {}",
                    e.source
                )));
            }
            if !(e.length > 0.0) || !e.length.is_finite() {
                return Err(Error::InvalidGraph(format!(
                    "edge {i} has non-positive length {}",
                    e.length
                )));
            }
            covered[e.source] = true;
            covered[e.target] = true;
        }
        if let Some(v) = covered.iter().position(|c| !c) {
            return Err(Error::InvalidGraph(format!(
                "vertex {v} is not incident to any edge"
            )));
        }
        Ok(Self { num_vertices, edges })
    }

    pub fn num_vertices(&self) -> usize {
        self.num_vertices
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn edge(&self, e: usize) -> &Edge {
        &self.edges[e]
    }

    pub fn total_length(&self) -> f64 {
        self.edges.iter().map(|e| e.length).sum()
    }

    pub fn degrees(&self) -> VertexDegreeTable {
        let mut d = vec![0usize; self.num_vertices];
        for e in &self.edges {
            d[e.source] += 1;
            d[e.target] += 1;
        }
        VertexDegreeTable(d)
    }

    /// Parses the plain-text format: a header line `num_vertices num_edges`
    /// followed by one `u v length` line per edge. Lines starting with `#`
    /// and blank lines are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut header: Option<(usize, usize)> = None;
        let mut edges = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            let err = |message: String| Error::Parse {
                line: lineno + 1,
                message,
            };
            if header.is_none() {
                if fields.len() != 2 {
                    return Err(err(format!(
                        "expected header `num_vertices num_edges`, got `{line}`"
                    )));
                }
                let nv = fields[0]
                    .parse::<usize>()
                    .map_err(|e| err(format!("bad vertex count: {e}")))?;
                let ne = fields[1]
                    .parse::<usize>()
                    .map_err(|e| err(format!("bad edge count: {e}")))?;
                header = Some((nv, ne));
                continue;
            }
            if fields.len() != 3 {
                return Err(err(format!("expected `u v length`, got `{line}`")));
            }
            let source = fields[0]
                .parse::<usize>()
                .map_err(|e| err(format!("bad vertex id: {e}")))?;
            let target = fields[1]
                .parse::<usize>()
                .map_err(|e| err(format!("bad vertex id: {e}")))?;
            let length = fields[2]
                .parse::<f64>()
                .map_err(|e| err(format!("bad edge length: {e}")))?;
            edges.push(Edge {
                source,
                target,
                length,
            });
        }
        let (num_vertices, num_edges) = header.ok_or(Error::Parse {
            line: 0,
            message: "missing header line".into(),
        })?;
        if edges.len() != num_edges {
            return Err(Error::Parse {
                line: 0,
                message: format!(
                    "header declares {num_edges} edges but {} were given",
                    edges.len()
                ),
            });
        }
        Self::new(num_vertices, edges)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{} {}", self.num_vertices, self.edges.len());
        for e in &self.edges {
            let _ = writeln!(out, "{} {} {}", e.source, e.target, e.length);
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }
}

/// Barabasi-Albert preferential attachment with unit-weight edges of the
/// given length. Starts from a complete graph on `m + 1` vertices; every
/// later vertex attaches to `m` distinct existing vertices with probability
/// proportional to their current degree. Deterministic for a fixed seed.
pub fn barabasi_albert(n: usize, m: usize, edge_length: f64, seed: u64) -> Result<MetricGraph> {
    if m < 1 {
        return Err(Error::InvalidParameter(format!(
            "attachment count m must be at least 1, got {m}"
        )));
    }
    if n < m + 1 {
        return Err(Error::InvalidParameter(format!(
            "barabasi-albert needs at least m + 1 = {} vertices, got {n}",
            m + 1
        )));
    }
    if !(edge_length > 0.0) || !edge_length.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "edge length must be positive, got {edge_length}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edges = Vec::with_capacity(m * (m + 1) / 2 + m * (n - m - 1));
    // Endpoint multiset: drawing uniformly from it is drawing proportionally
    // to degree.
    let mut endpoints: Vec<usize> = Vec::new();
    let push_edge = |edges: &mut Vec<Edge>, endpoints: &mut Vec<usize>, u: usize, v: usize| {
        edges.push(Edge {
            source: u,
            target: v,
            length: edge_length,
        });
        endpoints.push(u);
        endpoints.push(v);
    };
    for u in 0..=m {
        for v in (u + 1)..=m {
            push_edge(&mut edges, &mut endpoints, u, v);
        }
    }
    let mut chosen: Vec<usize> = Vec::with_capacity(m);
    for v in (m + 1)..n {
        chosen.clear();
        while chosen.len() < m {
            let t = endpoints[rng.random_range(0..endpoints.len())];
            if !chosen.contains(&t) {
                chosen.push(t);
            }
        }
        // Delay endpoint updates so v's own edges don't bias this batch.
        for &t in &chosen {
            edges.push(Edge {
                source: t,
                target: v,
                length: edge_length,
            });
        }
        for &t in &chosen {
            endpoints.push(t);
            endpoints.push(v);
        }
    }
    MetricGraph::new(n, edges)
}

#[cfg(test)]
mod tests {
    use super::*;

    const DEFAULT_GRAPH: &str = "\
# triangle with a pendant edge
4 4
0 1 1.0
1 2 1.0
2 0 1.0
0 3 1.0
";

    #[test]
    fn parses_default_graph() {
        let g = MetricGraph::parse(DEFAULT_GRAPH).unwrap();
        assert_eq!(g.num_vertices(), 4);
        assert_eq!(g.num_edges(), 4);
        assert_eq!(g.degrees().as_slice(), &[3, 2, 2, 1]);
        assert_eq!(g.total_length(), 4.0);
    }

    #[test]
    fn rejects_self_loop() {
        let text = "2 2\n0 1 1.0\n1 1 0.5\n";
        assert!(matches!(
            MetricGraph::parse(text),
            Err(Error::InvalidGraph(_))
        ));
    }

    #[test]
    fn rejects_non_positive_length() {
        let text = "2 1\n0 1 0.0\n";
        assert!(matches!(
            MetricGraph::parse(text),
            Err(Error::InvalidGraph(_))
        ));
        let text = "2 1\n0 1 -2.0\n";
        assert!(matches!(
            MetricGraph::parse(text),
            Err(Error::InvalidGraph(_))
        ));
    }

    #[test]
    fn rejects_out_of_range_vertex() {
        let text = "2 1\n0 5 1.0\n";
        assert!(matches!(
            MetricGraph::parse(text),
            Err(Error::InvalidGraph(_))
        ));
    }

    #[test]
    fn rejects_isolated_vertex() {
        let text = "3 1\n0 1 1.0\n";
        assert!(matches!(
            MetricGraph::parse(text),
            Err(Error::InvalidGraph(_))
        ));
    }

    #[test]
    fn rejects_malformed_lines() {
        assert!(matches!(
            MetricGraph::parse("2 1\n0 1\n"),
            Err(Error::Parse { line: 2, .. })
        ));
        assert!(matches!(
            MetricGraph::parse("nonsense\n"),
            Err(Error::Parse { line: 1, .. })
        ));
        // Declared edge count does not match the body.
        assert!(matches!(
            MetricGraph::parse("2 2\n0 1 1.0\n"),
            Err(Error::Parse { .. })
        ));
    }

    #[test]
    fn allows_multi_edges() {
        let g = MetricGraph::parse("2 2\n0 1 1.0\n0 1 2.0\n").unwrap();
        assert_eq!(g.degrees().as_slice(), &[2, 2]);
    }

    #[test]
    fn text_round_trip() {
        let g = MetricGraph::parse(DEFAULT_GRAPH).unwrap();
        let again = MetricGraph::parse(&g.to_text()).unwrap();
        assert_eq!(g, again);
    }

    #[test]
    fn barabasi_albert_smallest_case_is_a_triangle() {
        let g = barabasi_albert(3, 2, 1.0, 7).unwrap();
        assert_eq!(g.num_edges(), 3);
        assert_eq!(g.degrees().as_slice(), &[2, 2, 2]);
    }

    #[test]
    fn barabasi_albert_edge_count_and_connectivity() {
        let g = barabasi_albert(100, 2, 1.0, 42).unwrap();
        assert_eq!(g.num_edges(), 3 + 2 * 97);
        // Union-find connectivity.
        let mut parent: Vec<usize> = (0..100).collect();
        fn find(parent: &mut Vec<usize>, mut x: usize) -> usize {
            while parent[x] != x {
                parent[x] = parent[parent[x]];
                x = parent[x];
            }
            x
        }
        for e in g.edges() {
            let (a, b) = (find(&mut parent, e.source), find(&mut parent, e.target));
            parent[a] = b;
        }
        let root = find(&mut parent, 0);
        assert!((0..100).all(|v| find(&mut parent, v) == root));
        // Attachment targets within one batch are distinct.
        for v in 3..100 {
            let mut targets: Vec<usize> = g
                .edges()
                .iter()
                .filter(|e| e.target == v)
                .map(|e| e.source)
                .collect();
            targets.sort_unstable();
            targets.dedup();
            assert_eq!(targets.len(), 2, "vertex {v} attached to a duplicate");
        }
    }

    #[test]
    fn barabasi_albert_is_deterministic_per_seed() {
        let a = barabasi_albert(50, 2, 1.0, 9).unwrap();
        let b = barabasi_albert(50, 2, 1.0, 9).unwrap();
        assert_eq!(a, b);
        let c = barabasi_albert(50, 2, 1.0, 10).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn barabasi_albert_rejects_bad_parameters() {
        assert!(barabasi_albert(2, 2, 1.0, 0).is_err());
        assert!(barabasi_albert(10, 0, 1.0, 0).is_err());
        assert!(barabasi_albert(10, 2, 0.0, 0).is_err());
    }
}
